#pragma once

// Command-line front end. `run` is callable in-process so tests can drive
// subcommands without spawning the binary.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbu/cbu.hpp"

namespace cbu::cli {

namespace fs = std::filesystem;

// Raw flag values; unset optionals fall back to the config file.
struct Flags {
  std::string config;
  std::optional<std::string> dataset, backend, scheme, out, tie_mode, bootstrap_mode, probe_protocol, solvers;
  std::optional<int> rollouts, k, resamples, folds;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<int>> budgets;
  bool strict_pool = false;
  bool include_human = false;
};

struct Settings {
  ConfigMap config;
  fs::path config_dir;
  fs::path dataset;
  fs::path out;
  std::string backend;
  int rollouts = default_rollouts;
  JudgeScheme scheme = JudgeScheme::ten_point;
  std::optional<std::uint64_t> seed;
  bool strict_pool = false;
  MetricOptions metric;
  BootstrapMode bootstrap_mode = BootstrapMode::with_replacement;
  ProbeProtocol probe_protocol = ProbeProtocol::k_fold;
  int folds = default_probe_folds;
  std::optional<int> k;
  int resamples = default_bootstrap_resamples;
  std::vector<int> budgets = default_bootstrap_budgets;
  std::vector<std::string> solvers;
  fs::path cache;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = detail::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline std::vector<int> parse_budgets(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "budget '" + item + "' is not an integer");
    }
  }
  return out;
}

inline ProbeProtocol parse_probe_protocol(std::string_view s) {
  if (s == "in_sample") return ProbeProtocol::in_sample;
  if (s == "k_fold") return ProbeProtocol::k_fold;
  throw Error(ErrorKind::config, "unknown probe protocol '" + std::string(s) + "'");
}

inline std::string_view to_string(ProbeProtocol p) { return p == ProbeProtocol::in_sample ? "in_sample" : "k_fold"; }

/// Flags win over the config file, which wins over defaults.
inline Settings resolve(const Flags& f) {
  Settings s;
  if (!f.config.empty()) {
    s.config = load_config(f.config);
    s.config_dir = fs::path(f.config).parent_path();
  }
  const auto& c = s.config;
  auto pick = [&](const std::optional<std::string>& flag, std::string_view key) -> std::optional<std::string> {
    if (flag) return flag;
    return c.get(key);
  };
  // Paths from the config file are relative to the file; flag paths are not.
  auto path_of = [&](const std::optional<std::string>& flag, std::string_view key) -> std::optional<fs::path> {
    if (flag) return fs::path(*flag);
    auto v = c.get(key);
    if (!v) return std::nullopt;
    fs::path p(*v);
    return p.is_relative() && !s.config_dir.empty() ? s.config_dir / p : p;
  };

  if (auto p = path_of(f.dataset, "dataset")) s.dataset = *p;
  s.out = path_of(f.out, "out").value_or(fs::path("out"));
  if (auto v = pick(f.backend, "backend")) s.backend = *v;
  if (f.rollouts) {
    s.rollouts = *f.rollouts;
  } else if (auto v = c.get_number<int>("T")) {
    s.rollouts = *v;
  }
  if (s.rollouts < 1) throw Error(ErrorKind::config, "T must be >= 1");
  if (auto v = pick(f.scheme, "scheme")) s.scheme = parse_judge_scheme(*v);
  if (f.seed) {
    s.seed = f.seed;
  } else if (auto v = c.get_number<std::uint64_t>("seed")) {
    s.seed = v;
  }
  s.strict_pool = f.strict_pool || c.get_bool("strict_pool").value_or(false);
  s.metric.include_human = f.include_human || c.get_bool("include_human").value_or(false);
  if (auto v = pick(f.tie_mode, "tie_mode")) s.metric.tie_mode = parse_tie_mode(*v);
  if (auto v = pick(f.bootstrap_mode, "bootstrap_mode")) s.bootstrap_mode = parse_bootstrap_mode(*v);
  if (auto v = pick(f.probe_protocol, "probe_protocol")) s.probe_protocol = parse_probe_protocol(*v);
  if (f.folds) {
    s.folds = *f.folds;
  } else if (auto v = c.get_number<int>("folds")) {
    s.folds = *v;
  }
  if (s.folds < 2) throw Error(ErrorKind::config, "folds must be >= 2");
  if (f.k) {
    s.k = f.k;
  } else if (auto v = c.get_number<int>("k")) {
    s.k = v;
  }
  if (s.k && *s.k < 1) throw Error(ErrorKind::config, "k must be >= 1");
  if (f.resamples) {
    s.resamples = *f.resamples;
  } else if (auto v = c.get_number<int>("resamples")) {
    s.resamples = *v;
  }
  if (s.resamples < 1) throw Error(ErrorKind::config, "resamples must be >= 1");
  if (f.budgets) {
    s.budgets = *f.budgets;
  } else if (auto v = c.get("budgets")) {
    s.budgets = parse_budgets(*v);
  }
  for (std::size_t i = 0; i < s.budgets.size(); ++i) {
    if (s.budgets[i] < 1 || (i > 0 && s.budgets[i] <= s.budgets[i - 1])) {
      throw Error(ErrorKind::config, "budgets must be positive and strictly increasing");
    }
  }
  if (auto v = pick(f.solvers, "solvers")) s.solvers = split_list(*v);
  s.cache = path_of(std::nullopt, "cache").value_or(s.out / "cache" / "rollouts.jsonl");
  return s;
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Dataset {
  std::vector<Problem> problems;
  std::vector<Candidate> candidates;
  std::map<std::string, const Problem*> by_id;
};

inline void require_dataset(const Settings& s) {
  if (s.dataset.empty()) throw Error(ErrorKind::config, "no dataset given (--dataset or 'dataset' key)");
  if (!fs::is_directory(s.dataset)) throw Error(ErrorKind::config, "dataset '" + s.dataset.string() + "' is not a directory");
}

inline void fail_on(const ValidationReport& report, bool strict, std::ostream& err) {
  for (const auto& v : report.violations) err << "violation [" << v.code << "] " << v.message << "\n";
  if (report.has_structural() || (strict && !report.ok())) {
    throw Error(ErrorKind::data, std::to_string(report.violations.size()) + " dataset violation(s)");
  }
}

inline Dataset load_dataset(const Settings& s, bool need_candidates, std::ostream& err) {
  require_dataset(s);
  Dataset d;
  auto problems_path = s.dataset / "problems.jsonl";
  if (!fs::exists(problems_path)) throw Error(ErrorKind::config, "missing " + problems_path.string());
  d.problems = load_problems(problems_path);
  fail_on(validate_problems(d.problems), true, err);
  for (const auto& p : d.problems) d.by_id[p.id] = &p;

  auto cand_path = s.dataset / "candidates.jsonl";
  if (fs::exists(cand_path)) {
    d.candidates = load_candidates(cand_path);
  } else if (need_candidates) {
    throw Error(ErrorKind::config, "missing " + cand_path.string());
  }
  ValidationReport all;
  for (const auto& pool : pools_by_problem(d.candidates)) {
    if (!d.by_id.count(pool.problem_id)) {
      all.violations.push_back({Severity::structural, "unknown_problem", pool.problem_id,
                                "candidates reference unknown problem '" + pool.problem_id + "'"});
    }
    auto r = validate_pool(pool, s.strict_pool);
    all.violations.insert(all.violations.end(), r.violations.begin(), r.violations.end());
  }
  std::sort(all.violations.begin(), all.violations.end());
  fail_on(all, s.strict_pool, err);
  return d;
}

struct Run {
  Settings settings;
  Gateway gateway;
  std::map<std::string, BackendSpec> specs;
  RunManifest manifest;

  Run(Settings s, std::string subcommand) : settings(std::move(s)) {
    manifest.subcommand = std::move(subcommand);
    manifest.created_at = utc_timestamp();
    for (auto id : all_template_ids) {
      auto t = builtin_template(id);
      manifest.templates.push_back({std::string(to_string(id)), template_digest(t), false});
    }
    if (settings.seed) manifest.seeds["sampling"] = *settings.seed;
    manifest.flags["tie_mode"] = std::string(to_string(settings.metric.tie_mode));
    manifest.flags["include_human"] = settings.metric.include_human ? "true" : "false";
    manifest.flags["bootstrap_mode"] = std::string(to_string(settings.bootstrap_mode));
    manifest.flags["probe_protocol"] = std::string(cli::to_string(settings.probe_protocol));
    manifest.flags["strict_pool"] = settings.strict_pool ? "true" : "false";
    manifest.flags["scheme"] = std::string(cbu::to_string(settings.scheme));
    manifest.flags["boxed_literal"] = "single_brace";
    if (!settings.dataset.empty()) manifest.inputs.push_back(settings.dataset.string());
  }

  /// Registers every configured backend and opens the rollout cache.
  void connect() {
    specs = backend_specs(settings.config, settings.config_dir);
    if (settings.backend.empty()) throw Error(ErrorKind::config, "no backend selected (--backend or 'backend' key)");
    if (!specs.count(settings.backend)) {
      throw Error(ErrorKind::config, "backend '" + settings.backend + "' is not defined in the config");
    }
    for (const auto& [id, spec] : specs) {
      gateway.add_backend(id, make_backend(spec), spec.max_in_flight);
      manifest.backends.push_back({id, spec.kind, spec.http.endpoint, spec.http.model_name, spec.sampling.temperature,
                                   spec.sampling.max_new_tokens, spec.max_in_flight});
    }
    gateway.set_cache(std::make_shared<FileRolloutCache>(settings.cache));
  }

  ScoringConfig scoring(const std::string& backend_id) const {
    ScoringConfig cfg;
    cfg.backend_id = backend_id;
    cfg.sampling = specs.at(backend_id).sampling;
    cfg.sampling.seed = settings.seed;
    cfg.rollouts = settings.rollouts;
    return cfg;
  }

  fs::path out(const std::string& name) {
    fs::create_directories(settings.out);
    fs::path p = settings.out / name;
    manifest.outputs.push_back(p.string());
    return p;
  }

  /// A run in which every request failed has nothing to report; surface the
  /// backend failure instead of writing empty outputs.
  void require_completions() const {
    auto first = gateway.first_failure();
    if (!first) return;
    if (gateway.cache_hits() == 0 && gateway.failures() > 0 && gateway.failures() >= gateway.backend_calls()) {
      throw Error(first->first, "every backend request failed; first failure: " + first->second);
    }
  }

  fs::path finish() {
    manifest.counters["backend_calls"] = gateway.backend_calls();
    manifest.counters["cache_hits"] = gateway.cache_hits();
    manifest.counters["failures"] = gateway.failures();
    fs::path dir = settings.out / "manifests";
    fs::create_directories(dir);
    manifest.run_id = next_run_id(dir, manifest.subcommand);
    return write_manifest(dir, manifest);
  }
};

/// Replaces the records of `method` in scores.jsonl, keeping other methods.
inline void merge_scores(const fs::path& path, ScoreMethod method, const std::vector<ScoreRecord>& fresh) {
  std::vector<ScoreRecord> keep;
  if (fs::exists(path)) {
    for (auto& r : load_scores(path)) {
      if (r.method != method) keep.push_back(std::move(r));
    }
  }
  keep.insert(keep.end(), fresh.begin(), fresh.end());
  write_jsonl(path, keep);
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_ingest(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "ingest");
  auto d = load_dataset(s, false, err);
  auto problems = d.problems;
  std::sort(problems.begin(), problems.end(), [](const Problem& a, const Problem& b) { return a.id < b.id; });
  std::vector<Candidate> candidates;
  for (auto& pool : pools_by_problem(d.candidates)) {
    for (auto& c : pool.candidates) candidates.push_back(std::move(c));
  }
  write_jsonl(run.out("problems.jsonl"), problems);
  write_jsonl(run.out("candidates.jsonl"), candidates);
  run.finish();
  out << "ingested " << problems.size() << " problems, " << candidates.size() << " candidates\n";
  return 0;
}

inline int cmd_rollout(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "rollout");
  auto d = load_dataset(s, false, err);
  run.connect();
  auto cfg = run.scoring(s.backend);
  int k = s.k.value_or(default_rollouts);
  std::vector<ordered_json> rows;
  std::vector<Rollout> rollouts;
  for (const auto& p : d.problems) {
    auto est = estimate_solvability(run.gateway, p.id, p.statement, p.gold_answer, k, cfg);
    if (est.trials < k) err << "warning: '" << p.id << "': " << (k - est.trials) << " attempts failed\n";
    ordered_json j;
    j["question_id"] = est.question_id;
    j["k"] = est.k;
    j["trials"] = est.trials;
    j["successes"] = est.successes;
    j["avg_at_k"] = est.avg_at_k;
    j["difficulty"] = difficulty(est);
    rows.push_back(std::move(j));
    for (auto& r : est.rollouts) rollouts.push_back(std::move(r));
  }
  std::string text;
  for (const auto& j : rows) text += jsonl_line(j);
  run.require_completions();
  write_file_atomic(run.out("solvability.jsonl"), text);
  write_jsonl(run.out("rollouts-solve.jsonl"), rollouts);
  run.manifest.flags["k"] = std::to_string(k);
  run.finish();
  out << "estimated avg@" << k << " for " << rows.size() << " problems\n";
  return 0;
}

inline int cmd_score_cbu(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "score-cbu");
  auto d = load_dataset(s, true, err);
  run.connect();
  run.manifest.rollouts = s.rollouts;
  auto cfg = run.scoring(s.backend);
  std::vector<ScoreRecord> records;
  std::vector<Rollout> rollouts;
  std::size_t missing = 0;
  for (const auto& pool : pools_by_problem(d.candidates)) {
    const Problem& p = *d.by_id.at(pool.problem_id);
    for (auto& est : score_cbu_many(run.gateway, p, pool.candidates, cfg)) {
      for (const auto& w : est.warnings) err << "warning: " << w << "\n";
      if (auto rec = est.record()) {
        records.push_back(*rec);
      } else {
        ++missing;
      }
      for (auto& r : est.rollouts) rollouts.push_back(std::move(r));
    }
  }
  run.require_completions();
  merge_scores(run.out("scores.jsonl"), ScoreMethod::cbu, records);
  write_jsonl(run.out("rollouts-cbu.jsonl"), rollouts);
  run.finish();
  out << "cbu scored " << records.size() << " candidates";
  if (missing) out << " (" << missing << " missing)";
  out << "\n";
  return 0;
}

inline int cmd_score_judge(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "score-judge");
  auto d = load_dataset(s, true, err);
  run.connect();
  run.manifest.rollouts = s.rollouts;
  auto cfg = run.scoring(s.backend);
  const ScoreMethod method = s.scheme == JudgeScheme::genrm ? ScoreMethod::genrm_adapter : ScoreMethod::judge;
  std::vector<ScoreRecord> records;
  std::vector<Rollout> rollouts;
  std::size_t missing = 0;
  for (const auto& pool : pools_by_problem(d.candidates)) {
    const Problem& p = *d.by_id.at(pool.problem_id);
    for (auto& o : score_judge_many(run.gateway, p, pool.candidates, s.scheme, cfg)) {
      for (const auto& w : o.warnings) err << "warning: " << w << "\n";
      if (o.record) {
        records.push_back(*o.record);
      } else {
        ++missing;
      }
      for (auto& r : o.rollouts) rollouts.push_back(std::move(r));
    }
  }
  run.require_completions();
  merge_scores(run.out("scores.jsonl"), method, records);
  write_jsonl(run.out("rollouts-" + std::string(cbu::to_string(method)) + ".jsonl"), rollouts);
  run.finish();
  out << cbu::to_string(method) << " scored " << records.size() << " candidates";
  if (missing) out << " (" << missing << " missing)";
  out << "\n";
  return 0;
}

// Labeled scores per method, then per problem.
using MethodScores = std::map<std::string, std::map<std::string, LabeledScores<double>>>;

inline MethodScores labeled_scores(const Dataset& d, const std::vector<ScoreRecord>& scores, std::ostream& err) {
  std::map<std::string, const Candidate*> cands;
  for (const auto& c : d.candidates) cands[c.id] = &c;
  MethodScores out;
  std::size_t unlabeled = 0;
  for (const auto& r : scores) {
    auto it = cands.find(r.candidate_id);
    if (it == cands.end()) throw Error(ErrorKind::data, "score for unknown candidate '" + r.candidate_id + "'");
    const Candidate& c = *it->second;
    bool human = c.source == Source::human;
    if (!c.label && !human) {
      ++unlabeled;
      continue;
    }
    out[std::string(cbu::to_string(r.method))][c.problem_id].push_back(
        {c.id, r.value, c.label.value_or(Label::correct), human});
  }
  if (unlabeled) err << "warning: " << unlabeled << " unlabeled candidate scores ignored\n";
  return out;
}

inline std::map<std::string, double> load_difficulty(const fs::path& path) {
  std::map<std::string, double> out;
  if (!fs::exists(path)) return out;
  for (const auto& rec : read_jsonl(path)) {
    try {
      out[rec.value.at("question_id").get<std::string>()] = rec.value.at("difficulty").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::data, path.string() + ":" + std::to_string(rec.line) + ": " + e.what());
    }
  }
  return out;
}

inline EvaluationReport build_report(const Settings& s, const Dataset& d, std::ostream& err) {
  EvaluationReport report;
  report.settings["tie_mode"] = std::string(to_string(s.metric.tie_mode));
  report.settings["include_human"] = s.metric.include_human ? "true" : "false";
  auto scores_path = s.out / "scores.jsonl";
  if (!fs::exists(scores_path)) {
    err << "warning: no scores.jsonl; writing an empty report\n";
    return report;
  }
  auto by_method = labeled_scores(d, load_scores(scores_path), err);
  auto groups = group_problems(d.problems);
  auto difficulty_of = load_difficulty(s.out / "solvability.jsonl");

  ordered_json above = ordered_json::object();
  ordered_json gap = ordered_json::object();
  for (const auto& [method, questions] : by_method) {
    MethodReport mr;
    mr.method = method;
    std::vector<LabeledScores<double>> all;
    std::vector<DifficultyQuestion> diff;
    for (const auto& [qid, scores] : questions) {
      mr.per_question[qid] = compute_metrics(scores, s.metric);
      all.push_back(scores);
      if (auto it = difficulty_of.find(qid); it != difficulty_of.end()) diff.push_back({qid, it->second, scores});
    }
    mr.aggregate = aggregate(mr.per_question, groups);
    report.methods.push_back(std::move(mr));

    ordered_json rates = ordered_json::object();
    for (auto sel : {ClassSelector::correct_llm, ClassSelector::correct_human, ClassSelector::wrong}) {
      rates[std::string(to_string(sel))] = metric_json(above_average_rate(all, sel));
    }
    above[method] = std::move(rates);

    if (!diff.empty()) {
      auto table = score_gap_by_difficulty(diff, default_difficulty_bins, s.metric);
      ordered_json rows = ordered_json::array();
      for (const auto& r : table.rows) {
        rows.push_back({{"bin", r.bin}, {"lower", r.lower}, {"upper", r.upper}, {"questions", r.questions},
                        {"mean_gap", r.mean_gap}});
      }
      gap[method] = {{"rows", rows}, {"empty_bins", table.empty_bins}, {"skipped_questions", table.skipped_questions}};
    }
  }
  report.sections["above_average"] = std::move(above);
  if (!gap.empty()) report.sections["difficulty_gap"] = std::move(gap);
  return report;
}

inline int cmd_metrics(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "metrics");
  auto d = load_dataset(s, true, err);
  auto report = build_report(s, d, err);
  export_report(report, run.out("report.json"));
  run.finish();
  out << "metrics for " << report.methods.size() << " method(s) written to " << (s.out / "report.json").string()
      << "\n";
  return 0;
}

inline int cmd_bootstrap(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "bootstrap");
  std::uint64_t seed = s.seed.value_or(0);
  run.manifest.seeds["bootstrap"] = seed;
  run.manifest.flags["resamples"] = std::to_string(s.resamples);

  ordered_json curves = ordered_json::array();
  auto add_curve = [&](const std::string& method, const std::map<std::string, std::vector<double>>& pools,
                       double lower, double upper) {
    std::vector<double> sums(s.budgets.size(), 0.0);
    std::size_t used = 0, skipped = 0;
    std::uint64_t ordinal = 0;
    for (const auto& [key, units] : pools) {
      ++ordinal;
      if (s.bootstrap_mode == BootstrapMode::without_replacement &&
          units.size() < static_cast<std::size_t>(s.budgets.back())) {
        ++skipped;
        continue;
      }
      auto curve = bootstrap_error({units, lower, upper}, s.budgets, s.resamples, s.bootstrap_mode, seed + ordinal);
      for (std::size_t i = 0; i < sums.size(); ++i) sums[i] += curve.points[i].mean_normalized_error;
      ++used;
    }
    ordered_json points = ordered_json::array();
    for (std::size_t i = 0; i < sums.size() && used > 0; ++i) {
      points.push_back({{"n", s.budgets[i]},
                        {"mean_normalized_error", sums[i] / static_cast<double>(used)},
                        {"resamples", s.resamples}});
    }
    if (skipped) err << "warning: " << method << ": " << skipped << " pools smaller than the largest budget skipped\n";
    curves.push_back({{"method", method},
                      {"scale", {lower, upper}},
                      {"pools_used", used},
                      {"pools_skipped", skipped},
                      {"points", points}});
  };

  auto cbu_path = s.out / "rollouts-cbu.jsonl";
  if (fs::exists(cbu_path)) {
    std::map<std::string, std::vector<double>> pools;
    for (const auto& r : load_rollouts(cbu_path)) {
      if (!r.verdict) continue;
      pools[r.candidate_id.value_or("") + "/" + r.target_id.value_or("")].push_back(*r.verdict);
    }
    add_curve("cbu", pools, 0.0, 1.0);
  }
  for (std::string method : {"judge", "genrm_adapter"}) {
    auto path = s.out / ("rollouts-" + method + ".jsonl");
    if (!fs::exists(path)) continue;
    auto scale = scheme_scale(s.scheme);
    if (method == "genrm_adapter" || !scale) {
      err << "warning: " << method << ": no fixed score scale; skipped\n";
      continue;
    }
    // Judge errors are normalized by the range [0, max score].
    std::map<std::string, std::vector<double>> pools;
    for (const auto& r : load_rollouts(path)) {
      if (r.parsed_score) pools[r.candidate_id.value_or("")].push_back(*r.parsed_score);
    }
    add_curve(method, pools, std::min(0.0, scale->lower), scale->upper);
  }
  if (curves.empty()) throw Error(ErrorKind::data, "no rollout files in " + s.out.string() + " to bootstrap");

  ordered_json doc;
  doc["mode"] = std::string(to_string(s.bootstrap_mode));
  doc["resamples"] = s.resamples;
  doc["seed"] = seed;
  doc["curves"] = std::move(curves);
  write_file_atomic(run.out("bootstrap.json"), doc.dump(2) + "\n");
  run.finish();
  out << "bootstrap curves for " << doc["curves"].size() << " method(s)\n";
  return 0;
}

inline int cmd_regress(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "regress");
  auto d = load_dataset(s, true, err);
  auto scores_path = s.out / "scores.jsonl";
  if (!fs::exists(scores_path)) throw Error(ErrorKind::data, "no scores.jsonl in " + s.out.string());
  std::uint64_t seed = s.seed.value_or(0);
  run.manifest.seeds["probe"] = seed;

  // Feature letters follow the usual naming: G (GenRM), J (judge), U (utility).
  const std::vector<std::pair<std::string, std::string>> features = {
      {"genrm_adapter", "G"}, {"judge", "J"}, {"cbu", "U"}};
  std::map<std::string, std::map<std::string, double>> value;  // method -> candidate -> score
  for (const auto& r : load_scores(scores_path)) value[std::string(cbu::to_string(r.method))][r.candidate_id] = r.value;

  std::vector<const Candidate*> sample;
  for (const auto& c : d.candidates) {
    if (!c.label) continue;
    if (c.source == Source::human && !s.metric.include_human) continue;
    sample.push_back(&c);
  }

  ordered_json rows = ordered_json::array();
  std::vector<std::size_t> present;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (value.count(features[i].first)) present.push_back(i);
  }
  for (unsigned mask = 1; mask < (1u << present.size()); ++mask) {
    std::vector<std::size_t> cols;
    std::string name;
    for (std::size_t b = 0; b < present.size(); ++b) {
      if (mask & (1u << b)) {
        cols.push_back(present[b]);
        name += name.empty() ? "" : "+";
        name += features[present[b]].second;
      }
    }
    std::vector<const Candidate*> rows_used;
    for (const auto* c : sample) {
      bool all = std::all_of(cols.begin(), cols.end(),
                             [&](std::size_t f) { return value[features[f].first].count(c->id) > 0; });
      if (all) rows_used.push_back(c);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows_used.size()), static_cast<Eigen::Index>(cols.size()));
    std::vector<int> y;
    for (std::size_t r = 0; r < rows_used.size(); ++r) {
      for (std::size_t f = 0; f < cols.size(); ++f) {
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = value[features[cols[f]].first][rows_used[r]->id];
      }
      y.push_back(*rows_used[r]->label == Label::correct ? 1 : 0);
    }
    ordered_json row;
    row["features"] = name;
    row["samples"] = rows_used.size();
    try {
      std::vector<std::string> names;
      for (auto f : cols) names.push_back(features[f].second);
      auto model = fit_probe(x, y, {}, names);
      double in_sample = probe_accuracy(model, x, y, {ProbeProtocol::in_sample, s.folds, seed});
      std::optional<double> k_fold;
      std::string k_fold_reason;
      try {
        k_fold = probe_accuracy(model, x, y, {ProbeProtocol::k_fold, s.folds, seed});
      } catch (const Error& e) {
        k_fold_reason = e.what();
      }
      if (s.probe_protocol == ProbeProtocol::in_sample) {
        row["accuracy"] = in_sample;
      } else {
        row["accuracy"] = k_fold ? ordered_json(*k_fold) : ordered_json(nullptr);
      }
      row["in_sample"] = in_sample;
      row["k_fold"] = k_fold ? ordered_json(*k_fold) : ordered_json(nullptr);
      if (!k_fold) row["k_fold_reason"] = k_fold_reason;
      ordered_json w = ordered_json::object();
      for (std::size_t f = 0; f < names.size(); ++f) w[names[f]] = model.weights[static_cast<Eigen::Index>(f)];
      row["weights"] = w;
      row["bias"] = model.bias;
    } catch (const Error& e) {
      row["accuracy"] = nullptr;
      row["reason"] = e.what();
    }
    rows.push_back(std::move(row));
  }

  // Rank agreement between methods over the candidates both scored.
  ordered_json corr = ordered_json::array();
  for (std::size_t a = 0; a < present.size(); ++a) {
    for (std::size_t b = a + 1; b < present.size(); ++b) {
      const auto& va = value[features[present[a]].first];
      const auto& vb = value[features[present[b]].first];
      std::vector<double> xa, xb;
      for (const auto& [cid, v] : va) {
        if (auto it = vb.find(cid); it != vb.end()) {
          xa.push_back(v);
          xb.push_back(it->second);
        }
      }
      ordered_json e = {{"a", features[present[a]].second}, {"b", features[present[b]].second}, {"n", xa.size()}};
      if (xa.size() < 2) {
        e["value"] = nullptr;
        e["reason"] = "fewer than two shared candidates";
      } else {
        auto rho = spearman(xa, xb);
        e["value"] = rho.value ? ordered_json(*rho.value) : ordered_json(nullptr);
        if (!rho.value) e["reason"] = rho.reason;
      }
      corr.push_back(std::move(e));
    }
  }

  ordered_json doc;
  doc["protocol"] = std::string(cli::to_string(s.probe_protocol));
  doc["folds"] = s.folds;
  doc["seed"] = seed;
  doc["regularization"] = default_probe_regularization;
  doc["rows"] = std::move(rows);
  doc["spearman"] = std::move(corr);
  write_file_atomic(run.out("probe.json"), doc.dump(2) + "\n");
  run.finish();
  out << "probe fitted on " << doc["rows"].size() << " feature set(s)\n";
  return 0;
}

inline int cmd_curate(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "curate");
  require_dataset(s);
  run.connect();
  std::vector<CandidateQuestion> questions;
  auto qpath = s.dataset / "questions.jsonl";
  if (fs::exists(qpath)) {
    questions = load_jsonl<CandidateQuestion>(qpath, candidate_question_from_json);
  } else {
    auto d = load_dataset(s, false, err);
    auto cfg = run.scoring(s.backend);
    for (const auto& p : d.problems) {
      try {
        auto v = generate_variants(run.gateway, p, cfg);
        questions.insert(questions.end(), v.begin(), v.end());
      } catch (const Error& e) {
        if (exit_code(e.kind()) == 3) throw;
        err << "warning: '" << p.id << "': " << e.what() << "\n";
      }
    }
  }
  CurationOptions opt;
  opt.solvability_backend = s.backend;
  opt.solver_backends = s.solvers.empty() ? std::vector<std::string>{s.backend} : s.solvers;
  for (const auto& b : opt.solver_backends) {
    if (!run.specs.count(b)) throw Error(ErrorKind::config, "solver backend '" + b + "' is not defined");
  }
  opt.sampling = run.specs.at(s.backend).sampling;
  opt.sampling.seed = s.seed;
  opt.k = s.k.value_or(default_curation_k);
  run.manifest.flags["k"] = std::to_string(opt.k);
  auto result = curate(run.gateway, std::move(questions), opt);

  std::string text;
  for (const auto& q : result.kept) text += jsonl_line(to_json(q));
  write_file_atomic(run.out("curated.jsonl"), text);
  ordered_json doc;
  doc["k"] = opt.k;
  doc["band"] = {opt.band_low, opt.band_high};
  doc["integer_floor"] = opt.integer_floor;
  doc["solvers"] = opt.solver_backends;
  doc["stages"] = ordered_json::array();
  for (const auto& st : result.stages) doc["stages"].push_back({{"stage", st.stage}, {"in", st.in}, {"out", st.out}});
  doc["rejected"] = ordered_json::array();
  for (const auto& r : result.rejected) {
    doc["rejected"].push_back({{"question_id", r.question_id}, {"stage", r.stage}, {"reason", r.reason}});
  }
  write_file_atomic(run.out("curation.json"), doc.dump(2) + "\n");
  run.finish();
  out << "curated " << result.kept.size() << " question(s)\n";
  return 0;
}

inline int cmd_audit(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "audit");
  auto d = load_dataset(s, true, err);
  run.connect();
  auto cfg = run.scoring(s.backend);
  const Template tpl = builtin_template(TemplateId::error_audit);
  std::vector<const Candidate*> targets;
  std::vector<GenerationRequest> requests;
  for (const auto& c : d.candidates) {
    if (c.label != Label::wrong) continue;
    targets.push_back(&c);
    const Problem& p = *d.by_id.at(c.problem_id);
    requests.push_back({s.backend, std::string(to_string(TemplateId::error_audit)),
                        render(tpl, {{"original_question", p.statement}, {"candidate_solution", c.solution_text}}),
                        cfg.sampling, 0});
  }
  auto results = run.gateway.generate_batch(requests);

  std::map<int, std::size_t> category_counts;
  std::size_t failures = 0, violations = 0;
  std::string text;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ordered_json j;
    j["candidate_id"] = targets[i]->id;
    j["problem_id"] = targets[i]->problem_id;
    if (!results[i].ok()) {
      ++failures;
      j["error"] = results[i].error_message;
    } else {
      try {
        auto res = parse_error_audit(*results[i].completion, std::string_view(targets[i]->solution_text));
        j["categories"] = ordered_json::array();
        for (const auto& c : res.categories) {
          ++category_counts[c.id];
          j["categories"].push_back({{"id", c.id},
                                     {"name", c.name},
                                     {"evidence", c.evidence.size()},
                                     {"outside_taxonomy", c.outside_taxonomy}});
        }
        j["evidence_violations"] = res.evidence_violations;
        violations += res.evidence_violations;
      } catch (const Error& e) {
        ++failures;
        j["error"] = e.what();
      }
    }
    text += jsonl_line(j);
  }
  run.require_completions();
  write_file_atomic(run.out("audit.jsonl"), text);
  ordered_json doc;
  doc["audited"] = targets.size();
  doc["failures"] = failures;
  doc["evidence_violations"] = violations;
  doc["categories"] = ordered_json::object();
  for (const auto& [id, n] : category_counts) doc["categories"][std::to_string(id)] = n;
  write_file_atomic(run.out("audit.json"), doc.dump(2) + "\n");
  run.finish();
  out << "audited " << targets.size() << " wrong candidate(s), " << failures << " unparsed\n";
  return 0;
}

inline int cmd_report(const Settings& s, std::ostream& out, std::ostream& err) {
  Run run(s, "report");
  auto d = load_dataset(s, true, err);
  auto report = build_report(s, d, err);
  for (std::string name : {"bootstrap", "probe", "curation", "audit"}) {
    auto path = s.out / (name + ".json");
    if (!fs::exists(path)) continue;
    try {
      report.sections[name] = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::data, path.string() + ": " + e.what());
    }
  }
  export_report(report, run.out("report.json"));
  run.finish();
  out << "report written to " << (s.out / "report.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline void build_app(CLI::App& app, Flags& f) {
  app.description("Consequence-based utility scoring and evaluation of candidate solutions.");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", f.config, "Key-value config file; flags override its keys");
  app.add_option("--dataset", f.dataset, "Dataset directory with problems.jsonl and candidates.jsonl");
  app.add_option("--backend", f.backend, "Backend id from the config used for generation");
  app.add_option("--T", f.rollouts, "Rollouts per neighborhood question (or per judge call)");
  app.add_option("--scheme", f.scheme, "Judge scheme: ten_point, proofgrader, uq_binary, genrm");
  app.add_option("--seed", f.seed, "Base seed for sampling, bootstrap and folds");
  app.add_option("--out", f.out, "Output directory");
  app.add_flag("--strict-pool", f.strict_pool, "Enforce the 9-candidate 4/5 pool composition");
  app.add_option("--tie-mode", f.tie_mode, "Ranking tie handling: expected, pessimistic, optimistic");
  app.add_option("--bootstrap-mode", f.bootstrap_mode, "with_replacement or without_replacement");
  app.add_option("--probe-protocol", f.probe_protocol, "Headline probe accuracy: k_fold or in_sample");
  app.add_flag("--include-human", f.include_human, "Rank the human candidate with the LLM pool");
  app.add_option("--k", f.k, "Attempts per question for avg@k");
  app.add_option("--folds", f.folds, "Folds for k-fold probe accuracy");
  app.add_option("--resamples", f.resamples, "Bootstrap resamples per budget");
  app.add_option("--budgets", f.budgets, "Bootstrap rollout budgets, strictly increasing")->delimiter(',');
  app.add_option("--solvers", f.solvers, "Comma-separated solver backends for answer agreement");

  app.add_subcommand("ingest", "Validate and normalize the dataset");
  app.add_subcommand("rollout", "Estimate avg@k solvability of each problem");
  app.add_subcommand("score-cbu", "Score candidates by consequence-based utility");
  app.add_subcommand("score-judge", "Score candidates with an LLM judge");
  app.add_subcommand("metrics", "Compute ranking metrics into report.json");
  app.add_subcommand("bootstrap", "Rollout-budget error curves");
  app.add_subcommand("regress", "Logistic-regression correctness probes");
  app.add_subcommand("curate", "Generate and filter neighborhood questions");
  app.add_subcommand("audit", "Error-taxonomy audit of wrong candidates");
  app.add_subcommand("report", "Assemble every available table into report.json");
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"", "cbu"};
  Flags f;
  build_app(app, f);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code(ErrorKind::config);
  }

  try {
    Settings s = resolve(f);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "ingest") return cmd_ingest(s, out, err);
    if (name == "rollout") return cmd_rollout(s, out, err);
    if (name == "score-cbu") return cmd_score_cbu(s, out, err);
    if (name == "score-judge") return cmd_score_judge(s, out, err);
    if (name == "metrics") return cmd_metrics(s, out, err);
    if (name == "bootstrap") return cmd_bootstrap(s, out, err);
    if (name == "regress") return cmd_regress(s, out, err);
    if (name == "curate") return cmd_curate(s, out, err);
    if (name == "audit") return cmd_audit(s, out, err);
    if (name == "report") return cmd_report(s, out, err);
    err << "config error: unknown subcommand '" << name << "'\n";
    return exit_code(ErrorKind::config);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  }
}

}  // namespace cbu::cli
