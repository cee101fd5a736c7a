#pragma once

// Consequence-based utility, judge baselines and solvability estimates.
//
// Utility of a candidate C for problem Q: condition the solver on (Q, C),
// ask it each neighborhood question T times, verify every rollout, and take
// successes / trials pooled over all neighborhoods. Transport failures are
// excluded from the denominator instead of being counted as wrong answers.

#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cbu/error.hpp"
#include "cbu/gateway.hpp"
#include "cbu/model.hpp"
#include "cbu/prompts.hpp"
#include "cbu/verdict.hpp"

namespace cbu {

inline constexpr int default_rollouts = 64;
inline constexpr int economy_rollouts = 8;

struct ScoringConfig {
  std::string backend_id;
  Sampling sampling;
  int rollouts = default_rollouts;
  // Expert mode: per-neighborhood trial counts overriding `rollouts`.
  std::map<std::string, int> ragged_trials;
};

struct UtilityEstimate {
  std::string candidate_id;
  std::vector<NeighborhoodCount> per_neighborhood;
  double value = 0.0;
  std::int64_t failed = 0;
  std::vector<Rollout> rollouts;
  std::vector<std::string> warnings;

  std::int64_t successes() const {
    return std::accumulate(per_neighborhood.begin(), per_neighborhood.end(), std::int64_t{0},
                           [](std::int64_t a, const NeighborhoodCount& c) { return a + c.successes; });
  }
  std::int64_t trials() const {
    return std::accumulate(per_neighborhood.begin(), per_neighborhood.end(), std::int64_t{0},
                           [](std::int64_t a, const NeighborhoodCount& c) { return a + c.trials; });
  }
  bool defined() const { return trials() > 0; }

  std::optional<ScoreRecord> record() const {
    if (!defined()) return std::nullopt;
    return ScoreRecord{candidate_id, ScoreMethod::cbu, value, trials(), per_neighborhood};
  }
};

/// Pooled utility: total successes over total trials. Zero trials yields 0
/// and must be treated as undefined by the caller.
inline double utility_from_counts(const std::vector<NeighborhoodCount>& counts) {
  std::int64_t s = 0, t = 0;
  for (const auto& c : counts) {
    if (c.successes < 0 || c.trials < 0 || c.successes > c.trials) {
      throw Error(ErrorKind::argument, "invalid success/trial counts for '" + c.neighborhood_id + "'");
    }
    s += c.successes;
    t += c.trials;
  }
  return t == 0 ? 0.0 : static_cast<double>(s) / static_cast<double>(t);
}

namespace detail {

inline Sampling rollout_sampling(const Sampling& base, std::int64_t index) {
  Sampling s = base;
  if (s.seed) s.seed = *s.seed + static_cast<std::uint64_t>(index);
  return s;
}

inline Rollout make_rollout(const GenerationRequest& req, const BatchResult& res) {
  Rollout r;
  r.backend_id = req.backend_id;
  r.prompt_hash = prompt_hash(req);
  r.sampling_digest = sampling_digest(req.sampling);
  r.index = req.index;
  if (res.ok()) {
    r.completion = *res.completion;
  } else {
    r.error = res.error_message;
  }
  return r;
}

inline void check_rollouts(int t) {
  if (t < 1) throw Error(ErrorKind::config, "rollout count must be >= 1");
}

}  // namespace detail

/// Scores several candidates of one problem in a single gateway batch.
inline std::vector<UtilityEstimate> score_cbu_many(Gateway& gateway, const Problem& problem,
                                                   const std::vector<Candidate>& candidates,
                                                   const ScoringConfig& cfg) {
  if (problem.neighborhoods.empty()) {
    throw Error(ErrorKind::config, "problem '" + problem.id + "' has no neighborhood questions");
  }
  detail::check_rollouts(cfg.rollouts);
  for (const auto& [nid, t] : cfg.ragged_trials) detail::check_rollouts(t);
  const Template tpl = builtin_template(TemplateId::cbu);

  struct Slot {
    std::size_t candidate;
    std::size_t neighborhood;
  };
  std::vector<GenerationRequest> requests;
  std::vector<Slot> slots;
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    const auto& cand = candidates[ci];
    if (cand.solution_text.empty()) throw Error(ErrorKind::data, "candidate '" + cand.id + "' is empty");
    for (std::size_t ni = 0; ni < problem.neighborhoods.size(); ++ni) {
      const auto& nb = problem.neighborhoods[ni];
      auto rt = cfg.ragged_trials.find(nb.id);
      int trials = rt == cfg.ragged_trials.end() ? cfg.rollouts : rt->second;
      std::string prompt = render(tpl, {{"original_question", problem.statement},
                                        {"candidate_solution", cand.solution_text},
                                        {"variant_question", nb.statement}});
      for (int t = 0; t < trials; ++t) {
        requests.push_back({cfg.backend_id, std::string(to_string(TemplateId::cbu)), prompt,
                            detail::rollout_sampling(cfg.sampling, t), t});
        slots.push_back({ci, ni});
      }
    }
  }

  auto results = gateway.generate_batch(requests);

  std::vector<UtilityEstimate> out(candidates.size());
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    out[ci].candidate_id = candidates[ci].id;
    for (const auto& nb : problem.neighborhoods) out[ci].per_neighborhood.push_back({nb.id, 0, 0});
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    auto [ci, ni] = slots[i];
    auto& est = out[ci];
    Rollout r = detail::make_rollout(requests[i], results[i]);
    r.candidate_id = candidates[ci].id;
    r.target_id = problem.neighborhoods[ni].id;
    r.method = "cbu";
    if (results[i].ok()) {
      int v = verify_completion(*results[i].completion, problem.neighborhoods[ni].gold_answer);
      r.verdict = v;
      est.per_neighborhood[ni].successes += v;
      est.per_neighborhood[ni].trials += 1;
    } else {
      ++est.failed;
    }
    est.rollouts.push_back(std::move(r));
  }
  for (auto& est : out) {
    est.value = utility_from_counts(est.per_neighborhood);
    if (est.failed > 0) {
      est.warnings.push_back("candidate '" + est.candidate_id + "': " + std::to_string(est.failed) +
                             " rollouts failed in transport and were excluded");
    }
    if (!est.defined()) {
      est.warnings.push_back("candidate '" + est.candidate_id + "': no successful rollouts; score missing");
    }
  }
  return out;
}

inline UtilityEstimate score_cbu(Gateway& gateway, const Problem& problem, const Candidate& candidate,
                                 const ScoringConfig& cfg) {
  return score_cbu_many(gateway, problem, {candidate}, cfg).front();
}

// ---------------------------------------------------------------------------
// Judge baselines

inline TemplateId judge_template(JudgeScheme scheme) {
  switch (scheme) {
    case JudgeScheme::ten_point: return TemplateId::judge_default;
    case JudgeScheme::proofgrader: return TemplateId::judge_proofgrader;
    case JudgeScheme::uq_binary: return TemplateId::judge_uq;
    case JudgeScheme::genrm: return TemplateId::judge_default;
  }
  return TemplateId::judge_default;
}

struct JudgeOutcome {
  std::string candidate_id;
  std::optional<ScoreRecord> record;  // empty when no rollout parsed
  std::int64_t unparseable = 0;
  std::int64_t failed = 0;
  std::vector<Rollout> rollouts;
  std::vector<std::string> warnings;
};

/// Mean of the parseable values; nullopt when there are none.
inline std::optional<double> mean_of_parsed(const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& v : values) {
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::vector<JudgeOutcome> score_judge_many(Gateway& gateway, const Problem& problem,
                                                  const std::vector<Candidate>& candidates, JudgeScheme scheme,
                                                  const ScoringConfig& cfg) {
  detail::check_rollouts(cfg.rollouts);
  const TemplateId tid = judge_template(scheme);
  const Template tpl = builtin_template(tid);
  const ScoreMethod method = scheme == JudgeScheme::genrm ? ScoreMethod::genrm_adapter : ScoreMethod::judge;

  std::vector<GenerationRequest> requests;
  for (const auto& cand : candidates) {
    std::string prompt =
        render(tpl, {{"original_question", problem.statement}, {"candidate_solution", cand.solution_text}});
    for (int t = 0; t < cfg.rollouts; ++t) {
      requests.push_back(
          {cfg.backend_id, std::string(to_string(tid)), prompt, detail::rollout_sampling(cfg.sampling, t), t});
    }
  }
  auto results = gateway.generate_batch(requests);

  std::vector<JudgeOutcome> out;
  out.reserve(candidates.size());
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    JudgeOutcome o;
    o.candidate_id = candidates[ci].id;
    std::vector<std::optional<double>> parsed;
    for (int t = 0; t < cfg.rollouts; ++t) {
      std::size_t i = ci * static_cast<std::size_t>(cfg.rollouts) + static_cast<std::size_t>(t);
      Rollout r = detail::make_rollout(requests[i], results[i]);
      r.candidate_id = o.candidate_id;
      r.target_id = problem.id;
      r.method = std::string(to_string(method));
      if (!results[i].ok()) {
        ++o.failed;
      } else {
        try {
          r.parsed_score = parse_judge_score(*results[i].completion, scheme).value;
        } catch (const Error& e) {
          ++o.unparseable;
          r.error = e.what();
        }
      }
      parsed.push_back(r.parsed_score);
      o.rollouts.push_back(std::move(r));
    }
    if (auto mean = mean_of_parsed(parsed)) {
      o.record = ScoreRecord{o.candidate_id, method, *mean, cfg.rollouts - o.unparseable - o.failed, std::nullopt};
    } else {
      o.warnings.push_back("candidate '" + o.candidate_id + "': zero parseable judge rollouts; score missing");
    }
    if (o.unparseable > 0) {
      o.warnings.push_back("candidate '" + o.candidate_id + "': " + std::to_string(o.unparseable) +
                           " unparseable judge rollouts dropped");
    }
    if (o.failed > 0) {
      o.warnings.push_back("candidate '" + o.candidate_id + "': " + std::to_string(o.failed) +
                           " judge rollouts failed in transport");
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline JudgeOutcome score_judge(Gateway& gateway, const Problem& problem, const Candidate& candidate,
                                JudgeScheme scheme, const ScoringConfig& cfg) {
  return score_judge_many(gateway, problem, {candidate}, scheme, cfg).front();
}

// ---------------------------------------------------------------------------
// Solvability

struct SolvabilityEstimate {
  std::string question_id;
  int k = 0;                 // attempts requested
  std::int64_t trials = 0;   // attempts that returned a completion
  std::int64_t successes = 0;
  double avg_at_k = 0.0;
  std::vector<Rollout> rollouts;
};

inline SolvabilityEstimate solvability_from_counts(std::string question_id, int k, std::int64_t successes,
                                                   std::int64_t trials) {
  if (trials < 0 || successes < 0 || successes > trials) {
    throw Error(ErrorKind::argument, "invalid solvability counts");
  }
  SolvabilityEstimate est;
  est.question_id = std::move(question_id);
  est.k = k;
  est.trials = trials;
  est.successes = successes;
  est.avg_at_k = trials == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(trials);
  return est;
}

/// k bare attempts (no exemplar) at a question, each verified against gold.
inline SolvabilityEstimate estimate_solvability(Gateway& gateway, const std::string& question_id,
                                                const std::string& statement, const std::string& gold, int k,
                                                const ScoringConfig& cfg) {
  if (k < 1) throw Error(ErrorKind::argument, "k must be >= 1");
  const Template tpl = builtin_template(TemplateId::solve);
  std::string prompt = render(tpl, {{"question", statement}});
  std::vector<GenerationRequest> requests;
  requests.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) {
    requests.push_back(
        {cfg.backend_id, std::string(to_string(TemplateId::solve)), prompt, detail::rollout_sampling(cfg.sampling, t), t});
  }
  auto results = gateway.generate_batch(requests);
  std::int64_t successes = 0, trials = 0;
  std::vector<Rollout> rollouts;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    Rollout r = detail::make_rollout(requests[i], results[i]);
    r.target_id = question_id;
    r.method = "solve";
    if (results[i].ok()) {
      r.verdict = verify_completion(*results[i].completion, gold);
      successes += *r.verdict;
      ++trials;
    }
    rollouts.push_back(std::move(r));
  }
  auto est = solvability_from_counts(question_id, k, successes, trials);
  est.rollouts = std::move(rollouts);
  return est;
}

/// 1 - avg@k: 0 means fully solved, 1 essentially unsolved.
inline double difficulty(const SolvabilityEstimate& est) { return 1.0 - est.avg_at_k; }

}  // namespace cbu
