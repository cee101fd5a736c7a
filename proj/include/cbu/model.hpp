#pragma once

// Shared data model: problems, candidates, rollouts and score records, with
// their canonical JSON encodings and structural validation.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbu/error.hpp"

namespace cbu {

using ordered_json = nlohmann::ordered_json;

struct NeighborhoodQuestion {
  std::string id;
  std::string statement;
  std::string gold_answer;  // stored verbatim; normalized only when verifying

  bool operator==(const NeighborhoodQuestion&) const = default;
};

struct Problem {
  std::string id;
  std::string group_id;
  std::string statement;
  std::string gold_answer;
  std::vector<NeighborhoodQuestion> neighborhoods;
  std::map<std::string, std::string> metadata;

  bool operator==(const Problem&) const = default;
};

enum class Source { llm, human };
enum class Label { correct, wrong };

struct Candidate {
  std::string id;
  std::string problem_id;
  std::string solution_text;
  Source source = Source::llm;
  std::optional<Label> label;

  bool operator==(const Candidate&) const = default;
};

struct CandidatePool {
  std::string problem_id;
  std::vector<Candidate> candidates;
};

struct Rollout {
  std::string backend_id;
  std::string prompt_hash;
  std::string sampling_digest;
  std::int64_t index = 0;
  // Run context; absent in the shared rollout cache.
  std::optional<std::string> candidate_id;
  std::optional<std::string> target_id;
  std::optional<std::string> method;
  // Full rendered prompt, kept so cache reads can be collision-checked.
  std::optional<std::string> prompt;
  std::string completion;
  std::optional<int> verdict;
  std::optional<double> parsed_score;
  std::optional<std::string> error;

  bool operator==(const Rollout&) const = default;
};

enum class ScoreMethod { cbu, judge, genrm_adapter };

struct NeighborhoodCount {
  std::string neighborhood_id;
  std::int64_t successes = 0;
  std::int64_t trials = 0;

  bool operator==(const NeighborhoodCount&) const = default;
};

struct ScoreRecord {
  std::string candidate_id;
  ScoreMethod method = ScoreMethod::cbu;
  double value = 0.0;
  std::int64_t support = 0;
  std::optional<std::vector<NeighborhoodCount>> components;

  bool operator==(const ScoreRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Enum names

inline std::string_view to_string(Source s) { return s == Source::llm ? "llm" : "human"; }
inline std::string_view to_string(Label l) { return l == Label::correct ? "correct" : "wrong"; }

inline std::string_view to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::cbu: return "cbu";
    case ScoreMethod::judge: return "judge";
    case ScoreMethod::genrm_adapter: return "genrm_adapter";
  }
  return "cbu";
}

inline Source parse_source(std::string_view s) {
  if (s == "llm") return Source::llm;
  if (s == "human") return Source::human;
  throw Error(ErrorKind::data, "unknown candidate source '" + std::string(s) + "'");
}

inline Label parse_label(std::string_view s) {
  if (s == "correct") return Label::correct;
  if (s == "wrong") return Label::wrong;
  throw Error(ErrorKind::data, "unknown label '" + std::string(s) + "'");
}

inline ScoreMethod parse_score_method(std::string_view s) {
  if (s == "cbu") return ScoreMethod::cbu;
  if (s == "judge") return ScoreMethod::judge;
  if (s == "genrm_adapter") return ScoreMethod::genrm_adapter;
  throw Error(ErrorKind::data, "unknown score method '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// JSON encoding. Field order is fixed so that encode(decode(x)) == x for any
// canonically encoded record.

namespace detail {

template <class T>
T required(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::data, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("bad field '") + key + "': " + e.what());
  }
}

template <class T>
std::optional<T> optional_field(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::data, std::string("bad field '") + key + "': " + e.what());
  }
}

inline void require_object(const ordered_json& j, std::string_view what) {
  if (!j.is_object()) throw Error(ErrorKind::data, std::string(what) + " record is not a JSON object");
}

}  // namespace detail

inline ordered_json to_json(const NeighborhoodQuestion& n) {
  return ordered_json{{"id", n.id}, {"statement", n.statement}, {"gold_answer", n.gold_answer}};
}

inline NeighborhoodQuestion neighborhood_from_json(const ordered_json& j) {
  detail::require_object(j, "neighborhood");
  return {detail::required<std::string>(j, "id"), detail::required<std::string>(j, "statement"),
          detail::required<std::string>(j, "gold_answer")};
}

inline ordered_json to_json(const Problem& p) {
  ordered_json j;
  j["id"] = p.id;
  j["group_id"] = p.group_id;
  j["statement"] = p.statement;
  j["gold_answer"] = p.gold_answer;
  j["neighborhoods"] = ordered_json::array();
  for (const auto& n : p.neighborhoods) j["neighborhoods"].push_back(to_json(n));
  if (!p.metadata.empty()) {
    ordered_json m = ordered_json::object();
    for (const auto& [k, v] : p.metadata) m[k] = v;
    j["metadata"] = std::move(m);
  }
  return j;
}

inline Problem problem_from_json(const ordered_json& j) {
  detail::require_object(j, "problem");
  Problem p;
  p.id = detail::required<std::string>(j, "id");
  p.group_id = detail::required<std::string>(j, "group_id");
  p.statement = detail::required<std::string>(j, "statement");
  p.gold_answer = detail::required<std::string>(j, "gold_answer");
  if (auto it = j.find("neighborhoods"); it != j.end()) {
    if (!it->is_array()) throw Error(ErrorKind::data, "'neighborhoods' must be an array");
    for (const auto& n : *it) p.neighborhoods.push_back(neighborhood_from_json(n));
  }
  if (auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(ErrorKind::data, "'metadata' must be an object");
    for (const auto& [k, v] : it->items()) {
      p.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  return p;
}

inline ordered_json to_json(const Candidate& c) {
  ordered_json j;
  j["id"] = c.id;
  j["problem_id"] = c.problem_id;
  j["source"] = to_string(c.source);
  if (c.label) j["label"] = to_string(*c.label);
  j["solution_text"] = c.solution_text;
  return j;
}

inline Candidate candidate_from_json(const ordered_json& j) {
  detail::require_object(j, "candidate");
  Candidate c;
  c.id = detail::required<std::string>(j, "id");
  c.problem_id = detail::required<std::string>(j, "problem_id");
  c.source = parse_source(detail::required<std::string>(j, "source"));
  if (auto l = detail::optional_field<std::string>(j, "label")) c.label = parse_label(*l);
  c.solution_text = detail::required<std::string>(j, "solution_text");
  return c;
}

inline ordered_json to_json(const Rollout& r) {
  ordered_json j;
  j["backend_id"] = r.backend_id;
  j["prompt_hash"] = r.prompt_hash;
  j["sampling_digest"] = r.sampling_digest;
  j["index"] = r.index;
  if (r.candidate_id) j["candidate_id"] = *r.candidate_id;
  if (r.target_id) j["target_id"] = *r.target_id;
  if (r.method) j["method"] = *r.method;
  if (r.prompt) j["prompt"] = *r.prompt;
  j["completion"] = r.completion;
  if (r.verdict) j["verdict"] = *r.verdict;
  if (r.parsed_score) j["parsed_score"] = *r.parsed_score;
  if (r.error) j["error"] = *r.error;
  return j;
}

inline Rollout rollout_from_json(const ordered_json& j) {
  detail::require_object(j, "rollout");
  Rollout r;
  r.backend_id = detail::required<std::string>(j, "backend_id");
  r.prompt_hash = detail::required<std::string>(j, "prompt_hash");
  r.sampling_digest = detail::required<std::string>(j, "sampling_digest");
  r.index = detail::required<std::int64_t>(j, "index");
  r.candidate_id = detail::optional_field<std::string>(j, "candidate_id");
  r.target_id = detail::optional_field<std::string>(j, "target_id");
  r.method = detail::optional_field<std::string>(j, "method");
  r.prompt = detail::optional_field<std::string>(j, "prompt");
  r.completion = detail::required<std::string>(j, "completion");
  r.verdict = detail::optional_field<int>(j, "verdict");
  r.parsed_score = detail::optional_field<double>(j, "parsed_score");
  r.error = detail::optional_field<std::string>(j, "error");
  if (r.index < 0) throw Error(ErrorKind::data, "rollout index must be >= 0");
  if (r.verdict && *r.verdict != 0 && *r.verdict != 1) {
    throw Error(ErrorKind::data, "rollout verdict must be 0 or 1");
  }
  return r;
}

inline ordered_json to_json(const ScoreRecord& s) {
  ordered_json j;
  j["candidate_id"] = s.candidate_id;
  j["method"] = to_string(s.method);
  j["value"] = s.value;
  j["support"] = s.support;
  if (s.components) {
    ordered_json arr = ordered_json::array();
    for (const auto& c : *s.components) {
      arr.push_back(ordered_json{{"neighborhood_id", c.neighborhood_id},
                                 {"successes", c.successes},
                                 {"trials", c.trials}});
    }
    j["components"] = std::move(arr);
  }
  return j;
}

inline ScoreRecord score_from_json(const ordered_json& j) {
  detail::require_object(j, "score");
  ScoreRecord s;
  s.candidate_id = detail::required<std::string>(j, "candidate_id");
  s.method = parse_score_method(detail::required<std::string>(j, "method"));
  s.value = detail::required<double>(j, "value");
  s.support = detail::required<std::int64_t>(j, "support");
  if (auto it = j.find("components"); it != j.end() && !it->is_null()) {
    std::vector<NeighborhoodCount> comps;
    for (const auto& c : *it) {
      comps.push_back({detail::required<std::string>(c, "neighborhood_id"),
                       detail::required<std::int64_t>(c, "successes"),
                       detail::required<std::int64_t>(c, "trials")});
    }
    s.components = std::move(comps);
  }
  if (s.support < 1) throw Error(ErrorKind::data, "score support must be >= 1");
  if (s.method == ScoreMethod::cbu && (s.value < 0.0 || s.value > 1.0)) {
    throw Error(ErrorKind::data, "cbu score outside [0,1]");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Validation

enum class Severity { structural, composition, content };

struct Violation {
  Severity severity;
  std::string code;
  std::string subject;
  std::string message;

  auto operator<=>(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has_structural() const {
    return std::any_of(violations.begin(), violations.end(),
                       [](const Violation& v) { return v.severity == Severity::structural; });
  }
};

namespace pool_composition {
inline constexpr std::size_t llm_candidates = 9;
inline constexpr std::size_t llm_correct = 4;
inline constexpr std::size_t llm_wrong = 5;
inline constexpr std::size_t max_human = 1;
}  // namespace pool_composition

/// Checks a candidate pool. Violations come back sorted, so the report does
/// not depend on candidate order. Strict mode adds the 9-candidate 4/5
/// composition rule and the one-human cap.
inline ValidationReport validate_pool(const CandidatePool& pool, bool strict) {
  ValidationReport report;
  auto add = [&](Severity sev, std::string code, std::string subject, std::string msg) {
    report.violations.push_back({sev, std::move(code), std::move(subject), std::move(msg)});
  };

  if (pool.candidates.empty()) {
    add(Severity::structural, "empty_pool", pool.problem_id, "candidate pool is empty");
    return report;
  }

  std::map<std::string, int> seen;
  for (const auto& c : pool.candidates) ++seen[c.id];
  for (const auto& [id, count] : seen) {
    if (count > 1) {
      add(Severity::structural, "duplicate_id", id,
          "candidate id '" + id + "' appears " + std::to_string(count) + " times");
    }
  }

  // Every copy of a duplicated id is checked so the result is order independent.
  std::size_t llm = 0, correct = 0, wrong = 0, human = 0;
  for (const auto& c : pool.candidates) {
    if (c.problem_id != pool.problem_id) {
      add(Severity::structural, "foreign_candidate", c.id,
          "candidate '" + c.id + "' references problem '" + c.problem_id + "'");
    }
    if (c.solution_text.empty()) {
      add(Severity::content, "empty_solution", c.id, "candidate '" + c.id + "' has empty solution_text");
    }
    if (c.source == Source::human) {
      ++human;
      continue;
    }
    ++llm;
    if (c.label == Label::correct) ++correct;
    if (c.label == Label::wrong) ++wrong;
    if (strict && !c.label) {
      add(Severity::composition, "missing_label", c.id, "candidate '" + c.id + "' has no label");
    }
  }

  if (strict) {
    using namespace pool_composition;
    if (llm != llm_candidates || correct != llm_correct || wrong != llm_wrong) {
      add(Severity::composition, "composition", pool.problem_id,
          "expected " + std::to_string(llm_candidates) + " llm candidates (" + std::to_string(llm_correct) +
              " correct / " + std::to_string(llm_wrong) + " wrong), found " + std::to_string(llm) + " (" +
              std::to_string(correct) + " / " + std::to_string(wrong) + ")");
    }
    if (human > max_human) {
      add(Severity::composition, "too_many_human", pool.problem_id,
          "at most " + std::to_string(max_human) + " human candidate allowed, found " + std::to_string(human));
    }
  }

  std::sort(report.violations.begin(), report.violations.end());
  return report;
}

inline ValidationReport validate_problem(const Problem& p) {
  ValidationReport report;
  auto add = [&](std::string code, std::string subject, std::string msg) {
    report.violations.push_back({Severity::structural, std::move(code), std::move(subject), std::move(msg)});
  };
  if (p.id.empty()) add("empty_id", p.id, "problem id is empty");
  if (p.group_id.empty()) add("empty_group", p.id, "problem '" + p.id + "' has empty group_id");
  if (p.gold_answer.empty()) add("empty_gold", p.id, "problem '" + p.id + "' has empty gold_answer");
  std::set<std::string> ids;
  for (const auto& n : p.neighborhoods) {
    if (!ids.insert(n.id).second) add("duplicate_id", n.id, "neighborhood id '" + n.id + "' repeated");
    if (n.gold_answer.empty()) add("empty_gold", n.id, "neighborhood '" + n.id + "' has empty gold_answer");
  }
  std::sort(report.violations.begin(), report.violations.end());
  return report;
}

inline ValidationReport validate_problems(const std::vector<Problem>& problems) {
  ValidationReport report;
  std::set<std::string> ids;
  for (const auto& p : problems) {
    if (!ids.insert(p.id).second) {
      report.violations.push_back(
          {Severity::structural, "duplicate_id", p.id, "problem id '" + p.id + "' repeated"});
    }
    auto sub = validate_problem(p);
    report.violations.insert(report.violations.end(), sub.violations.begin(), sub.violations.end());
  }
  std::sort(report.violations.begin(), report.violations.end());
  return report;
}

/// Groups problem ids by group_id. Keys are sorted; within a group, ids keep
/// their input order.
inline std::map<std::string, std::vector<std::string>> group_problems(const std::vector<Problem>& problems) {
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& p : problems) groups[p.group_id].push_back(p.id);
  return groups;
}

/// Splits a flat candidate list into per-problem pools, ordered by problem id.
inline std::vector<CandidatePool> pools_by_problem(const std::vector<Candidate>& candidates) {
  std::map<std::string, CandidatePool> pools;
  for (const auto& c : candidates) {
    auto& pool = pools[c.problem_id];
    pool.problem_id = c.problem_id;
    pool.candidates.push_back(c);
  }
  std::vector<CandidatePool> out;
  out.reserve(pools.size());
  for (auto& [_, pool] : pools) out.push_back(std::move(pool));
  return out;
}

}  // namespace cbu
