#pragma once

// Neighborhood-question curation: variant generation, solvability banding,
// multi-solver answer agreement and the integer floor check.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbu/error.hpp"
#include "cbu/gateway.hpp"
#include "cbu/model.hpp"
#include "cbu/prompts.hpp"
#include "cbu/scoring.hpp"
#include "cbu/verdict.hpp"

namespace cbu {

inline constexpr double default_band_low = 0.05;
inline constexpr double default_band_high = 0.5;
inline constexpr int default_curation_k = 1024;
inline constexpr long default_integer_floor = 1000;

struct CandidateQuestion {
  std::string id;
  std::string statement;
  std::map<std::string, std::string> proposed_answers;  // solver id -> answer
  std::optional<std::string> adopted_answer;
  std::optional<SolvabilityEstimate> solvability;
};

struct FilterDecision {
  bool keep = false;
  std::string reason;
  std::optional<std::string> adopted_answer;
};

/// Keep iff low < avg@k < high, both strict.
inline FilterDecision band_filter(const CandidateQuestion& q, double low = default_band_low,
                                  double high = default_band_high) {
  if (!q.solvability) throw Error(ErrorKind::pipeline, "question '" + q.id + "' has no solvability estimate");
  double a = q.solvability->avg_at_k;
  if (low < a && a < high) return {true, {}, std::nullopt};
  return {false, "avg@" + std::to_string(q.solvability->k) + " = " + std::to_string(a) + " outside (" +
                     std::to_string(low) + ", " + std::to_string(high) + ")",
          std::nullopt};
}

/// Keep iff every required solver proposed an answer and all normalize to
/// the same value; that value is adopted.
inline FilterDecision agreement_filter(const CandidateQuestion& q, const std::vector<std::string>& required_solvers) {
  if (required_solvers.empty()) throw Error(ErrorKind::argument, "agreement needs at least one solver");
  std::vector<std::string> sorted = required_solvers;
  std::sort(sorted.begin(), sorted.end());
  std::optional<std::string> common;
  for (const auto& solver : sorted) {
    auto it = q.proposed_answers.find(solver);
    if (it == q.proposed_answers.end() || detail::trim(it->second).empty()) {
      return {false, "missing answer from solver '" + solver + "'", std::nullopt};
    }
    std::string norm = normalize_answer(it->second);
    if (!common) {
      common = norm;
    } else if (*common != norm) {
      return {false, "solvers disagree", std::nullopt};
    }
  }
  return {true, {}, common};
}

/// Pass iff `answer` is an integer strictly greater than `floor`. Works on
/// arbitrarily long digit strings.
inline bool integer_floor_check(std::string_view answer, long floor = default_integer_floor) {
  std::string norm = normalize_answer(answer);
  std::string_view body = norm;
  bool negative = false;
  if (!body.empty() && body.front() == '-') {
    negative = true;
    body.remove_prefix(1);
  }
  if (body.empty() || !std::all_of(body.begin(), body.end(), detail::is_digit)) return false;
  if (negative && body != "0") {
    if (floor >= 0) return false;
  }
  // Compare |value| against floor as canonical digit strings.
  auto cmp_digits = [](std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
    int c = a.compare(b);
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  };
  std::string f = std::to_string(floor < 0 ? -floor : floor);
  if (floor >= 0) return !negative && cmp_digits(body, f) > 0;
  // Negative floor: non-negatives always pass; negatives pass iff |v| < |floor|.
  if (!negative || body == "0") return true;
  return cmp_digits(body, f) < 0;
}

/// Reads the `<questions>` block of a variant-generation completion. Accepts
/// a JSON array of strings or a Python-style list with single quotes.
inline std::vector<std::string> parse_generated_questions(std::string_view completion) {
  auto open = completion.rfind("<questions>");
  if (open == std::string_view::npos) throw Error(ErrorKind::parse, "no <questions> block");
  auto start = open + std::string_view("<questions>").size();
  auto close = completion.find("</questions>", start);
  if (close == std::string_view::npos) throw Error(ErrorKind::parse, "unterminated <questions> block");
  std::string_view body = detail::trim(completion.substr(start, close - start));

  try {
    auto j = nlohmann::json::parse(body);
    if (j.is_array()) {
      std::vector<std::string> out;
      for (const auto& e : j) {
        if (!e.is_string()) throw Error(ErrorKind::parse, "question list entry is not a string");
        out.push_back(e.get<std::string>());
      }
      return out;
    }
  } catch (const nlohmann::json::parse_error&) {
  }

  // Python list literal: [ 'a', "b", ... ] with backslash escapes.
  std::vector<std::string> out;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < body.size() && detail::is_space(body[i])) ++i;
  };
  skip_ws();
  if (i >= body.size() || body[i] != '[') throw Error(ErrorKind::parse, "question list is not a list");
  ++i;
  skip_ws();
  if (i < body.size() && body[i] == ']') return out;
  while (true) {
    skip_ws();
    if (i >= body.size() || (body[i] != '\'' && body[i] != '"')) {
      throw Error(ErrorKind::parse, "question list entry is not a string");
    }
    char quote = body[i++];
    std::string s;
    while (i < body.size() && body[i] != quote) {
      if (body[i] == '\\' && i + 1 < body.size()) {
        char e = body[i + 1];
        switch (e) {
          case 'n': s += '\n'; break;
          case 't': s += '\t'; break;
          case '\\': case '\'': case '"': s += e; break;
          default: s += '\\'; s += e; break;
        }
        i += 2;
      } else {
        s += body[i++];
      }
    }
    if (i >= body.size()) throw Error(ErrorKind::parse, "unterminated string in question list");
    ++i;
    out.push_back(std::move(s));
    skip_ws();
    if (i < body.size() && body[i] == ',') {
      ++i;
      skip_ws();
      if (i < body.size() && body[i] == ']') break;
      continue;
    }
    if (i < body.size() && body[i] == ']') break;
    throw Error(ErrorKind::parse, "malformed question list");
  }
  return out;
}

/// One variant-generation call; ids are `<problem id>-v<k>`.
inline std::vector<CandidateQuestion> generate_variants(Gateway& gateway, const Problem& problem,
                                                        const ScoringConfig& cfg) {
  const Template tpl = builtin_template(TemplateId::variant_gen);
  GenerationRequest req{cfg.backend_id, std::string(to_string(TemplateId::variant_gen)),
                        render(tpl, {{"original_question", problem.statement}}), cfg.sampling, 0};
  auto statements = parse_generated_questions(gateway.generate(req));
  std::vector<CandidateQuestion> out;
  for (std::size_t i = 0; i < statements.size(); ++i) {
    CandidateQuestion q;
    q.id = problem.id + "-v" + std::to_string(i + 1);
    q.statement = statements[i];
    out.push_back(std::move(q));
  }
  return out;
}

/// Asks each solver backend for one bare attempt and records its boxed answer.
inline void collect_proposed_answers(Gateway& gateway, std::vector<CandidateQuestion>& questions,
                                     const std::vector<std::string>& solver_backends, const Sampling& sampling) {
  const Template tpl = builtin_template(TemplateId::solve);
  std::vector<GenerationRequest> requests;
  for (const auto& q : questions) {
    for (const auto& b : solver_backends) {
      requests.push_back({b, std::string(to_string(TemplateId::solve)), render(tpl, {{"question", q.statement}}),
                          sampling, 0});
    }
  }
  auto results = gateway.generate_batch(requests);
  std::size_t r = 0;
  for (auto& q : questions) {
    for (const auto& b : solver_backends) {
      const auto& res = results[r++];
      if (!res.ok()) continue;
      auto parsed = extract_boxed(*res.completion);
      if (parsed.found) q.proposed_answers[b] = parsed.canonical;
    }
  }
}

struct CurationOptions {
  std::string solvability_backend;
  std::vector<std::string> solver_backends;
  Sampling sampling;
  int k = default_curation_k;
  double band_low = default_band_low;
  double band_high = default_band_high;
  long integer_floor = default_integer_floor;
};

struct StageCount {
  std::string stage;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct Rejection {
  std::string question_id;
  std::string stage;
  std::string reason;
};

struct CurationResult {
  std::vector<CandidateQuestion> kept;
  std::vector<StageCount> stages;
  std::vector<Rejection> rejected;
};

/// Agreement runs first to fix the reference answer that solvability is
/// measured against; then band, then the integer floor.
inline CurationResult curate(Gateway& gateway, std::vector<CandidateQuestion> questions, const CurationOptions& opt) {
  if (opt.solver_backends.empty()) throw Error(ErrorKind::config, "curation needs at least one solver backend");
  if (!(opt.band_low < opt.band_high)) throw Error(ErrorKind::config, "band low must be below band high");
  CurationResult result;

  auto stage = [&](std::string name, auto&& decide) {
    StageCount count{name, questions.size(), 0};
    std::vector<CandidateQuestion> next;
    for (auto& q : questions) {
      FilterDecision d = decide(q);
      if (d.keep) {
        next.push_back(std::move(q));
      } else {
        result.rejected.push_back({q.id, name, d.reason});
      }
    }
    count.out = next.size();
    result.stages.push_back(count);
    questions = std::move(next);
  };

  std::vector<CandidateQuestion> missing;
  for (const auto& q : questions) {
    bool have_all = std::all_of(opt.solver_backends.begin(), opt.solver_backends.end(),
                                [&](const std::string& s) { return q.proposed_answers.count(s) > 0; });
    if (!have_all) missing.push_back(q);
  }
  if (!missing.empty()) {
    collect_proposed_answers(gateway, missing, opt.solver_backends, opt.sampling);
    std::map<std::string, CandidateQuestion*> by_id;
    for (auto& m : missing) by_id[m.id] = &m;
    for (auto& q : questions) {
      if (auto it = by_id.find(q.id); it != by_id.end()) {
        for (const auto& [s, a] : it->second->proposed_answers) q.proposed_answers.try_emplace(s, a);
      }
    }
  }

  stage("agreement", [&](CandidateQuestion& q) {
    auto d = agreement_filter(q, opt.solver_backends);
    if (d.keep) q.adopted_answer = d.adopted_answer;
    return d;
  });

  ScoringConfig scfg;
  scfg.backend_id = opt.solvability_backend;
  scfg.sampling = opt.sampling;
  for (auto& q : questions) {
    if (!q.solvability) {
      q.solvability = estimate_solvability(gateway, q.id, q.statement, *q.adopted_answer, opt.k, scfg);
    }
  }
  stage("band", [&](CandidateQuestion& q) { return band_filter(q, opt.band_low, opt.band_high); });
  stage("integer_floor", [&](CandidateQuestion& q) {
    if (integer_floor_check(*q.adopted_answer, opt.integer_floor)) return FilterDecision{true, {}, q.adopted_answer};
    return FilterDecision{false, "answer '" + *q.adopted_answer + "' is not an integer above " +
                                     std::to_string(opt.integer_floor),
                          std::nullopt};
  });
  result.kept = std::move(questions);
  return result;
}

inline ordered_json to_json(const CandidateQuestion& q) {
  ordered_json j;
  j["id"] = q.id;
  j["statement"] = q.statement;
  ordered_json answers = ordered_json::object();
  for (const auto& [s, a] : q.proposed_answers) answers[s] = a;
  j["proposed_answers"] = answers;
  if (q.adopted_answer) j["adopted_answer"] = *q.adopted_answer;
  if (q.solvability) {
    j["solvability"] = {{"k", q.solvability->k},
                        {"trials", q.solvability->trials},
                        {"successes", q.solvability->successes},
                        {"avg_at_k", q.solvability->avg_at_k}};
  }
  return j;
}

inline CandidateQuestion candidate_question_from_json(const ordered_json& j) {
  try {
    CandidateQuestion q;
    q.id = j.at("id").get<std::string>();
    q.statement = j.at("statement").get<std::string>();
    if (auto it = j.find("proposed_answers"); it != j.end()) {
      for (const auto& [s, a] : it->items()) q.proposed_answers[s] = a.get<std::string>();
    }
    if (auto it = j.find("adopted_answer"); it != j.end() && !it->is_null()) q.adopted_answer = it->get<std::string>();
    if (auto it = j.find("solvability"); it != j.end() && !it->is_null()) {
      q.solvability = solvability_from_counts(q.id, it->at("k").get<int>(), it->at("successes").get<std::int64_t>(),
                                              it->at("trials").get<std::int64_t>());
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("bad candidate question: ") + e.what());
  }
}

}  // namespace cbu
