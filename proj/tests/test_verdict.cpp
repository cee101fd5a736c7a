#include <random>
#include <string>

#include <gtest/gtest.h>

#include "cbu/verdict.hpp"

using namespace cbu;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::pipeline;
}

}  // namespace

TEST(Boxed, ExtractsLastBalancedBox) {
  auto a = extract_boxed("so the answer is \\boxed{35}.");
  EXPECT_TRUE(a.found);
  EXPECT_EQ(a.canonical, "35");
  EXPECT_EQ(extract_boxed("\\boxed{12} then later \\boxed{34}").canonical, "34");
  EXPECT_EQ(extract_boxed("\\boxed{\\frac{1}{2}}").raw_span, "\\frac{1}{2}");
  EXPECT_EQ(extract_boxed("\\boxed {7}").canonical, "7");
}

TEST(Boxed, AbsenceIsAValue) {
  auto a = extract_boxed("no box here");
  EXPECT_FALSE(a.found);
  EXPECT_TRUE(a.canonical.empty());
  EXPECT_FALSE(extract_boxed("\\boxed{unclosed").found);
  EXPECT_EQ(extract_boxed("\\boxed{5} \\boxed{unclosed").canonical, "5");
}

TEST(Boxed, EscapedBracesDoNotCount) {
  EXPECT_EQ(extract_boxed("\\boxed{\\{1\\}}").raw_span, "\\{1\\}");
}

TEST(Boxed, RandomBraceStringsNeverFail) {
  std::mt19937 rng(42);
  const std::string alphabet = "{}\\boxed 12,";
  for (int trial = 0; trial < 20000; ++trial) {
    std::string s;
    int len = static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) {
      if (rng() % 6 == 0) {
        s += "\\boxed";
      } else {
        s += alphabet[rng() % alphabet.size()];
      }
    }
    auto a = extract_boxed(s);
    if (!a.found) {
      EXPECT_TRUE(a.canonical.empty());
      continue;
    }
    // The span must itself be brace-balanced ignoring escaped braces.
    int depth = 0;
    for (std::size_t i = 0; i < a.raw_span.size(); ++i) {
      bool esc = i > 0 && a.raw_span[i - 1] == '\\';
      if (a.raw_span[i] == '{' && !esc) ++depth;
      if (a.raw_span[i] == '}' && !esc) --depth;
      ASSERT_GE(depth, 0) << s;
    }
    EXPECT_EQ(depth, 0) << s;
  }
}

TEST(Normalize, IntegerForms) {
  EXPECT_EQ(normalize_answer(" 035"), "35");
  EXPECT_EQ(normalize_answer("+35"), "35");
  EXPECT_EQ(normalize_answer("-0"), "0");
  EXPECT_EQ(normalize_answer("-007"), "-7");
  EXPECT_EQ(normalize_answer("1,024"), "1024");
  EXPECT_EQ(normalize_answer("1{,}024"), "1024");
  EXPECT_EQ(normalize_answer("1\\,234\\,567"), "1234567");
  EXPECT_EQ(normalize_answer("000"), "0");
}

TEST(Normalize, NonIntegersAreTrimmedOnly) {
  EXPECT_EQ(normalize_answer(" 35.50 "), "35.50");
  EXPECT_EQ(normalize_answer("12,34"), "12,34");
  EXPECT_EQ(normalize_answer("\\frac{1}{2}"), "\\frac{1}{2}");
}

TEST(Verify, Examples) {
  EXPECT_EQ(verify_answer(extract_boxed("\\boxed{35}"), "35"), 1);
  EXPECT_EQ(verify_answer(extract_boxed("\\boxed{ 035}"), "35"), 1);
  EXPECT_EQ(verify_answer(extract_boxed("none"), "35"), 0);
  EXPECT_EQ(verify_completion("\\boxed{36}", "35"), 0);
  EXPECT_EQ(kind_of([] { verify_completion("\\boxed{1}", "  "); }), ErrorKind::argument);
}

TEST(Verify, SymmetricUnderNormalization) {
  const std::vector<std::string> forms = {"35", "035", "+35", "1,035", "1035", "-0", "0", "3.5", " 3.5", "x"};
  for (const auto& a : forms) {
    for (const auto& b : forms) {
      auto pa = extract_boxed("\\boxed{" + a + "}");
      auto pb = extract_boxed("\\boxed{" + b + "}");
      EXPECT_EQ(verify_answer(pa, b), verify_answer(pb, a)) << a << " vs " << b;
    }
  }
}

TEST(JudgeScore, TenPoint) {
  EXPECT_EQ(parse_judge_score("Score: 8", JudgeScheme::ten_point).value, 8);
  EXPECT_EQ(parse_judge_score("Score: 3 ... revised. Score: 7", JudgeScheme::ten_point).value, 7);
  EXPECT_EQ(parse_judge_score("**Score:** 9", JudgeScheme::ten_point).value, 9);
  EXPECT_EQ(kind_of([] { parse_judge_score("Score: 11", JudgeScheme::ten_point); }), ErrorKind::range);
  EXPECT_EQ(kind_of([] { parse_judge_score("Score: 0", JudgeScheme::ten_point); }), ErrorKind::range);
  EXPECT_EQ(kind_of([] { parse_judge_score("Score: 7.5", JudgeScheme::ten_point); }), ErrorKind::range);
  EXPECT_EQ(kind_of([] { parse_judge_score("great work", JudgeScheme::ten_point); }), ErrorKind::parse);
}

TEST(JudgeScore, ProofGrader) {
  EXPECT_EQ(parse_judge_score("<score>0</score>", JudgeScheme::proofgrader).value, 0);
  EXPECT_EQ(parse_judge_score("<score>2</score> then <score> 7 </score>", JudgeScheme::proofgrader).value, 7);
  EXPECT_EQ(kind_of([] { parse_judge_score("<score>8</score>", JudgeScheme::proofgrader); }), ErrorKind::range);
  EXPECT_EQ(kind_of([] { parse_judge_score("<score>5", JudgeScheme::proofgrader); }), ErrorKind::parse);
}

TEST(JudgeScore, UqBinary) {
  EXPECT_EQ(parse_judge_score("Accepted: [[Y]]", JudgeScheme::uq_binary).value, 1);
  EXPECT_EQ(parse_judge_score("Accepted: [[Y]] no wait Accepted: [[N]]", JudgeScheme::uq_binary).value, 0);
  EXPECT_EQ(kind_of([] { parse_judge_score("Accepted: [[Maybe]]", JudgeScheme::uq_binary); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([] { parse_judge_score("Accepted:", JudgeScheme::uq_binary); }), ErrorKind::parse);
}

TEST(JudgeScore, GenericScalar) {
  EXPECT_DOUBLE_EQ(parse_judge_score("reward = 0.73", JudgeScheme::genrm).value, 0.73);
  EXPECT_DOUBLE_EQ(parse_judge_score("Score: 2 ... final reward: -1.5", JudgeScheme::genrm).value, -1.5);
  EXPECT_FALSE(parse_judge_score("score: 4", JudgeScheme::genrm).scale);
}

TEST(JudgeScore, EveryCompletionIsVerdictOrUnparseable) {
  std::mt19937 rng(9);
  const std::vector<std::string> pieces = {"Score", ":", " ", "1", "0", "11", "<score>", "</score>", "Accepted:",
                                           "[[Y]]", "[[N]]", "x", "*", "."};
  for (auto scheme : {JudgeScheme::ten_point, JudgeScheme::proofgrader, JudgeScheme::uq_binary}) {
    for (int trial = 0; trial < 3000; ++trial) {
      std::string s;
      for (int i = 0, n = static_cast<int>(rng() % 12); i < n; ++i) s += pieces[rng() % pieces.size()];
      try {
        auto v = parse_judge_score(s, scheme);
        ASSERT_TRUE(v.scale);
        EXPECT_GE(v.value, v.scale->lower);
        EXPECT_LE(v.value, v.scale->upper);
      } catch (const Error& e) {
        EXPECT_TRUE(e.kind() == ErrorKind::parse || e.kind() == ErrorKind::range) << s;
      }
    }
  }
}

TEST(Audit, EmptyCategories) {
  EXPECT_TRUE(parse_error_audit(R"({"categories": []})").categories.empty());
}

TEST(Audit, OneCategoryTwoQuotes) {
  const std::string solution = "We assume f is continuous. Then the limit exists.";
  const std::string payload = R"({"categories":[{"id":4,"name":"Unjustified assumption","evidence":[
    {"quote":"We assume f is continuous.","analysis":{"claim":"c","why_problematic":"w","what_needed":"n"}},
    {"quote":"the limit is zero","analysis":{"claim":"c","why_problematic":"w","what_needed":"n"}}]}]})";
  auto r = parse_error_audit("```json\n" + payload + "\n```", std::string_view(solution));
  ASSERT_EQ(r.categories.size(), 1u);
  EXPECT_EQ(r.categories[0].id, 4);
  EXPECT_FALSE(r.categories[0].outside_taxonomy);
  ASSERT_EQ(r.categories[0].evidence.size(), 2u);
  EXPECT_EQ(r.categories[0].evidence[0].verbatim, true);
  EXPECT_EQ(r.categories[0].evidence[1].verbatim, false);
  EXPECT_EQ(r.evidence_violations, 1u);
  EXPECT_EQ(r.categories[0].evidence[0].why_problematic, "w");
}

TEST(Audit, IdsOutsideDocumentedTaxonomy) {
  auto r = parse_error_audit(R"({"categories":[{"id":6,"name":"Other","evidence":[]}]})");
  EXPECT_TRUE(r.categories.at(0).outside_taxonomy);
  EXPECT_EQ(kind_of([] { parse_error_audit(R"({"categories":[{"id":7}]})"); }), ErrorKind::parse);
}

TEST(Audit, MalformedPayloads) {
  EXPECT_EQ(kind_of([] { parse_error_audit(R"({"categories": [)"); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([] { parse_error_audit(R"([1,2])"); }), ErrorKind::parse);
  EXPECT_EQ(kind_of([] { parse_error_audit(R"({"categories":[{"id":"2"}]})"); }), ErrorKind::parse);
}

TEST(Schemes, ScalesAndNames) {
  EXPECT_EQ(scheme_scale(JudgeScheme::ten_point)->lower, 1);
  EXPECT_EQ(scheme_scale(JudgeScheme::ten_point)->upper, 10);
  EXPECT_EQ(scheme_scale(JudgeScheme::proofgrader)->upper, 7);
  EXPECT_EQ(scheme_scale(JudgeScheme::uq_binary)->upper, 1);
  EXPECT_FALSE(scheme_scale(JudgeScheme::genrm));
  for (auto s : {JudgeScheme::ten_point, JudgeScheme::proofgrader, JudgeScheme::uq_binary, JudgeScheme::genrm}) {
    EXPECT_EQ(parse_judge_scheme(to_string(s)), s);
  }
}
