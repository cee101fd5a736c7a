#pragma once

// Labeled-pool ranking metrics. Every metric is a template over the score
// type so it can run on doubles in production and on exact rationals in
// tests. Ties in the ranking are resolved as the expectation over uniformly
// random tie orderings unless another TieMode is requested.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "cbu/error.hpp"
#include "cbu/model.hpp"

namespace cbu {

enum class TieMode { expected, pessimistic, optimistic };

inline std::string_view to_string(TieMode m) {
  switch (m) {
    case TieMode::expected: return "expected";
    case TieMode::pessimistic: return "pessimistic";
    case TieMode::optimistic: return "optimistic";
  }
  return "expected";
}

inline TieMode parse_tie_mode(std::string_view s) {
  if (s == "expected") return TieMode::expected;
  if (s == "pessimistic") return TieMode::pessimistic;
  if (s == "optimistic") return TieMode::optimistic;
  throw Error(ErrorKind::config, "unknown tie mode '" + std::string(s) + "'");
}

struct MetricOptions {
  TieMode tie_mode = TieMode::expected;
  // When set, the human solution joins the pool for Acc@1, Recall@5, AUC and
  // MeanWin as a correct candidate. By default it is only used by HumanWin.
  bool include_human = false;
};

template <class Num>
struct LabeledEntry {
  std::string candidate_id;
  Num score;
  Label label;
  bool is_human = false;
};

template <class Num>
using LabeledScores = std::vector<LabeledEntry<Num>>;

template <class Num>
struct MetricValue {
  std::optional<Num> value;
  std::string reason;

  bool defined() const { return value.has_value(); }
  static MetricValue of(Num v) { return {v, {}}; }
  static MetricValue undefined(std::string why) { return {std::nullopt, std::move(why)}; }
};

inline constexpr int recall_depth = 5;

namespace detail {

// Three-way comparison; floating types get a small relative tolerance so
// means of identical values compare equal.
template <class Num>
int compare(const Num& a, const Num& b) {
  if constexpr (std::is_floating_point_v<Num>) {
    Num tol = Num(1e-12) * std::max<Num>(Num(1), std::max(std::fabs(a), std::fabs(b)));
    if (a - b > tol) return 1;
    if (b - a > tol) return -1;
    return 0;
  } else {
    if (a > b) return 1;
    if (b > a) return -1;
    return 0;
  }
}

template <class Num>
Num indicator_half(const Num& lhs, const Num& rhs) {
  int c = compare(lhs, rhs);
  return c > 0 ? Num(1) : c == 0 ? Num(1) / Num(2) : Num(0);
}

template <class Num>
Num mean(const std::vector<Num>& xs) {
  Num sum(0);
  for (const auto& x : xs) sum += x;
  return sum / Num(static_cast<long>(xs.size()));
}

template <class Num>
bool in_pool(const LabeledEntry<Num>& e, const MetricOptions& opt) {
  return !e.is_human || opt.include_human;
}

template <class Num>
bool is_correct(const LabeledEntry<Num>& e) {
  return e.is_human || e.label == Label::correct;
}

template <class Num>
std::vector<LabeledEntry<Num>> ranking_pool(const LabeledScores<Num>& scores, const MetricOptions& opt) {
  std::vector<LabeledEntry<Num>> pool;
  for (const auto& e : scores) {
    if (in_pool(e, opt)) pool.push_back(e);
  }
  return pool;
}

template <class Num>
std::vector<Num> class_scores(const LabeledScores<Num>& scores, const MetricOptions& opt, bool correct) {
  std::vector<Num> out;
  for (const auto& e : scores) {
    if (in_pool(e, opt) && is_correct(e) == correct) out.push_back(e.score);
  }
  return out;
}

// Number of correct candidates among the top `depth` ranks, with ties at the
// boundary resolved per the tie mode.
template <class Num>
Num top_correct(std::vector<LabeledEntry<Num>> pool, int depth, TieMode mode) {
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return b.score < a.score; });
  Num total(0);
  long slots = depth;
  std::size_t i = 0;
  while (i < pool.size() && slots > 0) {
    std::size_t j = i;
    long correct = 0;
    while (j < pool.size() && !(pool[j].score < pool[i].score) && !(pool[i].score < pool[j].score)) {
      if (is_correct(pool[j])) ++correct;
      ++j;
    }
    long group = static_cast<long>(j - i);
    if (group <= slots) {
      total += Num(correct);
      slots -= group;
    } else {
      switch (mode) {
        case TieMode::expected: total += Num(correct) * Num(slots) / Num(group); break;
        case TieMode::pessimistic: total += Num(std::max(0L, slots - (group - correct))); break;
        case TieMode::optimistic: total += Num(std::min(correct, slots)); break;
      }
      slots = 0;
    }
    i = j;
  }
  return total;
}

}  // namespace detail

/// Correctness of the top-ranked candidate.
template <class Num>
MetricValue<Num> acc_at_1(const LabeledScores<Num>& scores, const MetricOptions& opt = {}) {
  auto pool = detail::ranking_pool(scores, opt);
  if (pool.empty()) return MetricValue<Num>::undefined("no candidates in pool");
  return MetricValue<Num>::of(detail::top_correct(pool, 1, opt.tie_mode));
}

/// Fraction of correct candidates ranked in the top five.
template <class Num>
MetricValue<Num> recall_at_5(const LabeledScores<Num>& scores, const MetricOptions& opt = {}) {
  auto pool = detail::ranking_pool(scores, opt);
  long n_correct = std::count_if(pool.begin(), pool.end(), [](const auto& e) { return detail::is_correct(e); });
  if (n_correct == 0) return MetricValue<Num>::undefined("no correct candidates");
  return MetricValue<Num>::of(detail::top_correct(pool, recall_depth, opt.tie_mode) / Num(n_correct));
}

/// Pairwise separability with half credit for ties, computed from mid-ranks.
template <class Num>
MetricValue<Num> auc(const LabeledScores<Num>& scores, const MetricOptions& opt = {}) {
  auto pool = detail::ranking_pool(scores, opt);
  long n_pos = std::count_if(pool.begin(), pool.end(), [](const auto& e) { return detail::is_correct(e); });
  long n_neg = static_cast<long>(pool.size()) - n_pos;
  if (n_pos == 0) return MetricValue<Num>::undefined("no correct candidates");
  if (n_neg == 0) return MetricValue<Num>::undefined("no wrong candidates");

  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  // Sum of mid-ranks (1-based) of the correct candidates.
  Num rank_sum(0);
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    long correct = 0;
    while (j < pool.size() && !(pool[i].score < pool[j].score)) {
      if (detail::is_correct(pool[j])) ++correct;
      ++j;
    }
    Num mid = Num(static_cast<long>(i + 1 + j)) / Num(2);
    rank_sum += mid * Num(correct);
    i = j;
  }
  Num u = rank_sum - Num(n_pos) * Num(n_pos + 1) / Num(2);
  return MetricValue<Num>::of(u / (Num(n_pos) * Num(n_neg)));
}

/// 1 / 0.5 / 0 as the human solution scores above / equal to / below the
/// mean wrong score.
template <class Num>
MetricValue<Num> human_win(const LabeledScores<Num>& scores, const MetricOptions& = {}) {
  const LabeledEntry<Num>* human = nullptr;
  std::vector<Num> wrong;
  for (const auto& e : scores) {
    if (e.is_human) {
      if (human) return MetricValue<Num>::undefined("more than one human solution");
      human = &e;
    } else if (e.label == Label::wrong) {
      wrong.push_back(e.score);
    }
  }
  if (!human) return MetricValue<Num>::undefined("no human solution");
  if (wrong.empty()) return MetricValue<Num>::undefined("no wrong candidates");
  return MetricValue<Num>::of(detail::indicator_half(human->score, detail::mean(wrong)));
}

/// 1 / 0.5 / 0 comparing the mean correct score with the mean wrong score.
template <class Num>
MetricValue<Num> mean_win(const LabeledScores<Num>& scores, const MetricOptions& opt = {}) {
  auto pos = detail::class_scores(scores, opt, true);
  auto neg = detail::class_scores(scores, opt, false);
  if (pos.empty()) return MetricValue<Num>::undefined("no correct candidates");
  if (neg.empty()) return MetricValue<Num>::undefined("no wrong candidates");
  return MetricValue<Num>::of(detail::indicator_half(detail::mean(pos), detail::mean(neg)));
}

template <class Num>
struct BasicMetricSet {
  MetricValue<Num> acc_at_1;
  MetricValue<Num> recall_at_5;
  MetricValue<Num> auc;
  MetricValue<Num> human_win;
  MetricValue<Num> mean_win;
};

using MetricSet = BasicMetricSet<double>;

inline constexpr std::array<std::string_view, 5> metric_names = {"acc_at_1", "recall_at_5", "auc", "human_win",
                                                                 "mean_win"};

template <class Num>
MetricValue<Num>& metric_at(BasicMetricSet<Num>& m, std::size_t i) {
  switch (i) {
    case 0: return m.acc_at_1;
    case 1: return m.recall_at_5;
    case 2: return m.auc;
    case 3: return m.human_win;
    default: return m.mean_win;
  }
}

template <class Num>
const MetricValue<Num>& metric_at(const BasicMetricSet<Num>& m, std::size_t i) {
  return metric_at(const_cast<BasicMetricSet<Num>&>(m), i);
}

template <class Num>
BasicMetricSet<Num> compute_metrics(const LabeledScores<Num>& scores, const MetricOptions& opt = {}) {
  return {acc_at_1(scores, opt), recall_at_5(scores, opt), auc(scores, opt), human_win(scores, opt),
          mean_win(scores, opt)};
}

// ---------------------------------------------------------------------------
// Aggregation over questions and variant groups

struct AggregateCount {
  std::size_t questions_used = 0;
  std::size_t questions_undefined = 0;
  std::size_t groups_used = 0;
};

struct AggregateMetrics {
  MetricSet values;
  std::array<AggregateCount, 5> counts{};
};

/// Two-level mean: average defined values within each group, then across
/// groups. Undefined entries are excluded and counted.
inline AggregateMetrics aggregate(const std::map<std::string, MetricSet>& per_question,
                                  const std::map<std::string, std::vector<std::string>>& groups) {
  AggregateMetrics out;
  std::set<std::string> grouped;
  for (const auto& [gid, members] : groups) grouped.insert(members.begin(), members.end());
  for (const auto& [qid, _] : per_question) {
    if (!grouped.count(qid)) throw Error(ErrorKind::argument, "question '" + qid + "' belongs to no group");
  }

  for (std::size_t m = 0; m < metric_names.size(); ++m) {
    auto& count = out.counts[m];
    std::vector<double> group_means;
    std::string last_reason;
    for (const auto& [gid, members] : groups) {
      std::vector<double> vals;
      for (const auto& qid : members) {
        auto it = per_question.find(qid);
        if (it == per_question.end()) continue;
        const auto& mv = metric_at(it->second, m);
        if (mv.defined()) {
          vals.push_back(*mv.value);
          ++count.questions_used;
        } else {
          ++count.questions_undefined;
          last_reason = mv.reason;
        }
      }
      if (!vals.empty()) group_means.push_back(detail::mean(vals));
    }
    count.groups_used = group_means.size();
    auto& target = metric_at(out.values, m);
    if (group_means.empty()) {
      target = MetricValue<double>::undefined(last_reason.empty() ? "no questions" : last_reason);
    } else {
      target = MetricValue<double>::of(detail::mean(group_means));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

enum class ClassSelector { correct_llm, correct_human, correct_any, wrong };

inline std::string_view to_string(ClassSelector s) {
  switch (s) {
    case ClassSelector::correct_llm: return "correct_llm";
    case ClassSelector::correct_human: return "correct_human";
    case ClassSelector::correct_any: return "correct_any";
    case ClassSelector::wrong: return "wrong";
  }
  return "wrong";
}

template <class Num>
bool selected(const LabeledEntry<Num>& e, ClassSelector sel) {
  switch (sel) {
    case ClassSelector::correct_llm: return !e.is_human && e.label == Label::correct;
    case ClassSelector::correct_human: return e.is_human;
    case ClassSelector::correct_any: return e.is_human || e.label == Label::correct;
    case ClassSelector::wrong: return !e.is_human && e.label == Label::wrong;
  }
  return false;
}

/// Fraction of selected candidates scoring strictly above their question's
/// mean score (the mean runs over every scored candidate of the question).
template <class Num>
MetricValue<Num> above_average_rate(const std::vector<LabeledScores<Num>>& questions, ClassSelector sel) {
  long hits = 0, total = 0;
  for (const auto& q : questions) {
    if (q.empty()) continue;
    std::vector<Num> all;
    for (const auto& e : q) all.push_back(e.score);
    Num avg = detail::mean(all);
    for (const auto& e : q) {
      if (!selected(e, sel)) continue;
      ++total;
      if (detail::compare(e.score, avg) > 0) ++hits;
    }
  }
  if (total == 0) return MetricValue<Num>::undefined("no candidates in selected class");
  return MetricValue<Num>::of(Num(hits) / Num(total));
}

struct DifficultyQuestion {
  std::string question_id;
  double difficulty = 0.0;
  LabeledScores<double> scores;
};

struct GapRow {
  int bin = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t questions = 0;
  double mean_gap = 0.0;
};

struct GapTable {
  std::vector<GapRow> rows;
  std::vector<int> empty_bins;
  std::size_t skipped_questions = 0;  // lacking one of the two classes
};

inline constexpr int default_difficulty_bins = 10;

/// Per-question gap (mean correct - mean wrong) averaged within equal-width
/// difficulty bins on [0,1]. Empty bins are omitted and listed.
inline GapTable score_gap_by_difficulty(const std::vector<DifficultyQuestion>& questions,
                                        int bins = default_difficulty_bins, const MetricOptions& opt = {}) {
  if (bins < 1) throw Error(ErrorKind::argument, "bin count must be >= 1");
  std::vector<std::vector<double>> gaps(static_cast<std::size_t>(bins));
  GapTable table;
  for (const auto& q : questions) {
    if (!(q.difficulty >= 0.0 && q.difficulty <= 1.0)) {
      throw Error(ErrorKind::argument, "difficulty of '" + q.question_id + "' outside [0,1]");
    }
    auto pos = detail::class_scores(q.scores, opt, true);
    auto neg = detail::class_scores(q.scores, opt, false);
    if (pos.empty() || neg.empty()) {
      ++table.skipped_questions;
      continue;
    }
    int b = std::min(bins - 1, static_cast<int>(std::floor(q.difficulty * bins)));
    gaps[static_cast<std::size_t>(b)].push_back(detail::mean(pos) - detail::mean(neg));
  }
  for (int b = 0; b < bins; ++b) {
    const auto& g = gaps[static_cast<std::size_t>(b)];
    if (g.empty()) {
      table.empty_bins.push_back(b);
      continue;
    }
    table.rows.push_back({b, static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins, g.size(),
                          detail::mean(g)});
  }
  return table;
}

}  // namespace cbu
