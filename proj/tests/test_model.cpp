#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "cbu/model.hpp"

using namespace cbu;

namespace {

Candidate cand(std::string id, std::optional<Label> label, Source src = Source::llm, std::string pid = "p1") {
  return {std::move(id), std::move(pid), "solution " + std::to_string(label ? int(*label) : 9), src, label};
}

CandidatePool standard_pool() {
  CandidatePool pool{"p1", {}};
  for (int i = 0; i < 4; ++i) pool.candidates.push_back(cand("c" + std::to_string(i), Label::correct));
  for (int i = 4; i < 9; ++i) pool.candidates.push_back(cand("c" + std::to_string(i), Label::wrong));
  pool.candidates.push_back(cand("h", std::nullopt, Source::human));
  return pool;
}

bool has_code(const ValidationReport& r, const std::string& code) {
  return std::any_of(r.violations.begin(), r.violations.end(), [&](const Violation& v) { return v.code == code; });
}

}  // namespace

TEST(Model, ProblemRoundTripKeepsFieldOrder) {
  Problem p{"p1", "g1", "What is 2+2?", "4", {{"n1", "What is 3+3?", "6"}}, {{"source", "demo"}}};
  auto j = to_json(p);
  EXPECT_EQ(j.dump(),
            R"({"id":"p1","group_id":"g1","statement":"What is 2+2?","gold_answer":"4",)"
            R"("neighborhoods":[{"id":"n1","statement":"What is 3+3?","gold_answer":"6"}],"metadata":{"source":"demo"}})");
  auto back = problem_from_json(j);
  EXPECT_EQ(back.id, "p1");
  EXPECT_EQ(back.neighborhoods.at(0).gold_answer, "6");
  EXPECT_EQ(back.metadata.at("source"), "demo");
}

TEST(Model, CandidateRoundTrip) {
  Candidate c{"c1", "p1", "text", Source::human, std::nullopt};
  auto back = candidate_from_json(to_json(c));
  EXPECT_EQ(back.source, Source::human);
  EXPECT_FALSE(back.label);
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Model, ScoreRecordRoundTripAndChecks) {
  ScoreRecord s{"c1", ScoreMethod::cbu, 0.75, 8, std::vector<NeighborhoodCount>{{"n1", 6, 8}}};
  auto back = score_from_json(to_json(s));
  EXPECT_DOUBLE_EQ(back.value, 0.75);
  ASSERT_TRUE(back.components);
  EXPECT_EQ(back.components->at(0).successes, 6);

  auto bad = to_json(s);
  bad["value"] = 1.5;
  EXPECT_THROW(score_from_json(bad), Error);
  bad = to_json(s);
  bad["support"] = 0;
  EXPECT_THROW(score_from_json(bad), Error);
}

TEST(Model, RolloutRejectsBadVerdict) {
  Rollout r;
  r.backend_id = "b";
  r.prompt_hash = "h";
  r.sampling_digest = "s";
  r.completion = "x";
  r.verdict = 1;
  auto j = to_json(r);
  EXPECT_EQ(rollout_from_json(j).verdict, 1);
  j["verdict"] = 2;
  EXPECT_THROW(rollout_from_json(j), Error);
}

TEST(Model, DecodeErrorsAreDataErrors) {
  try {
    candidate_from_json(ordered_json::parse(R"({"id":"c"})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
  EXPECT_THROW(parse_source("robot"), Error);
  EXPECT_THROW(parse_label("maybe"), Error);
}

TEST(Model, StandardPoolIsValidInStrictMode) {
  EXPECT_TRUE(validate_pool(standard_pool(), true).ok());
}

TEST(Model, EmptyPoolIsStructural) {
  auto r = validate_pool({"p1", {}}, false);
  EXPECT_TRUE(r.has_structural());
  EXPECT_TRUE(has_code(r, "empty_pool"));
}

TEST(Model, DuplicateIdIsNamed) {
  auto pool = standard_pool();
  pool.candidates.push_back(cand("c0", Label::correct));
  auto r = validate_pool(pool, false);
  ASSERT_TRUE(has_code(r, "duplicate_id"));
  auto it = std::find_if(r.violations.begin(), r.violations.end(),
                         [](const Violation& v) { return v.code == "duplicate_id"; });
  EXPECT_EQ(it->subject, "c0");
}

TEST(Model, StrictCompositionChecks) {
  auto pool = standard_pool();
  pool.candidates.erase(pool.candidates.begin());
  EXPECT_TRUE(validate_pool(pool, false).ok());
  auto r = validate_pool(pool, true);
  EXPECT_TRUE(has_code(r, "composition"));
  EXPECT_FALSE(r.has_structural());

  pool = standard_pool();
  pool.candidates.push_back(cand("h2", std::nullopt, Source::human));
  EXPECT_TRUE(has_code(validate_pool(pool, true), "too_many_human"));

  pool = standard_pool();
  pool.candidates[0].label.reset();
  EXPECT_TRUE(has_code(validate_pool(pool, true), "missing_label"));
}

TEST(Model, ForeignCandidateIsStructural) {
  auto pool = standard_pool();
  pool.candidates.push_back(cand("x", Label::wrong, Source::llm, "p2"));
  EXPECT_TRUE(has_code(validate_pool(pool, false), "foreign_candidate"));
}

TEST(Model, ValidationIsOrderIndependent) {
  std::mt19937 rng(3);
  auto pool = standard_pool();
  pool.candidates.push_back(cand("c1", Label::wrong));
  pool.candidates.push_back(cand("h2", std::nullopt, Source::human));
  pool.candidates[2].solution_text.clear();
  auto reference = validate_pool(pool, true).violations;
  for (int trial = 0; trial < 50; ++trial) {
    std::shuffle(pool.candidates.begin(), pool.candidates.end(), rng);
    EXPECT_EQ(validate_pool(pool, true).violations, reference);
  }
}

TEST(Model, ProblemValidation) {
  std::vector<Problem> ps = {{"p1", "g", "s", "1", {{"n", "s", "2"}, {"n", "s", ""}}, {}},
                             {"p1", "", "s", "", {}, {}}};
  auto r = validate_problems(ps);
  for (auto code : {"duplicate_id", "empty_gold", "empty_group"}) EXPECT_TRUE(has_code(r, code)) << code;
}

TEST(Model, GroupingAndPools) {
  std::vector<Problem> ps = {{"b", "g2", "", "1", {}, {}}, {"a", "g1", "", "1", {}, {}}, {"c", "g2", "", "1", {}, {}}};
  auto groups = group_problems(ps);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.begin()->first, "g1");
  EXPECT_EQ(groups["g2"], (std::vector<std::string>{"b", "c"}));

  std::vector<Candidate> cs = {cand("x", Label::wrong, Source::llm, "q2"), cand("y", Label::correct, Source::llm, "q1"),
                               cand("z", Label::wrong, Source::llm, "q2")};
  auto pools = pools_by_problem(cs);
  ASSERT_EQ(pools.size(), 2u);
  EXPECT_EQ(pools[0].problem_id, "q1");
  EXPECT_EQ(pools[1].candidates.size(), 2u);
  EXPECT_EQ(pools[1].candidates[0].id, "x");
}
