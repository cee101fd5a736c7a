#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/rational.hpp>

namespace oracle {

using Q = boost::rational<long long>;

struct Item {
  Q score;
  bool correct = false;
  bool human = false;
};

enum class Mode { expected, pessimistic, optimistic };

// Rank order for one tie-break permutation: sort by descending score, ties
// broken by position in `perm`.
inline std::vector<int> ranked(const std::vector<Item>& pool, const std::vector<int>& perm) {
  std::vector<int> order = perm;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pool[b].score < pool[a].score; });
  return order;
}

inline long correct_in_top(const std::vector<Item>& pool, const std::vector<int>& order, int depth) {
  long n = 0;
  for (int i = 0; i < depth && i < static_cast<int>(order.size()); ++i) n += pool[order[i]].correct ? 1 : 0;
  return n;
}

// Expected / min / max of correct-in-top-depth over every permutation of the
// pool used as a tie-break order.
inline Q top_correct_by_permutation(const std::vector<Item>& pool, int depth, Mode mode) {
  std::vector<int> perm(pool.size());
  std::iota(perm.begin(), perm.end(), 0);
  long long sum = 0, count = 0;
  long lo = 1L << 30, hi = -1;
  do {
    long c = correct_in_top(pool, ranked(pool, perm), depth);
    sum += c;
    ++count;
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (mode == Mode::pessimistic) return Q(lo);
  if (mode == Mode::optimistic) return Q(hi);
  return Q(sum, count);
}

// Same quantity by enumerating which members of the boundary tie group take
// the remaining slots; every subset of that size is equally likely.
inline Q top_correct_by_subsets(const std::vector<Item>& pool, int depth, Mode mode) {
  std::vector<int> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return pool[b].score < pool[a].score; });
  long fixed = 0;
  int taken = 0;
  std::size_t i = 0;
  while (i < idx.size() && taken < depth) {
    std::size_t j = i;
    while (j < idx.size() && pool[idx[j]].score == pool[idx[i]].score) ++j;
    int g = static_cast<int>(j - i);
    if (taken + g <= depth) {
      for (std::size_t k = i; k < j; ++k) fixed += pool[idx[k]].correct ? 1 : 0;
      taken += g;
    } else {
      int slots = depth - taken;
      long long sum = 0, count = 0;
      long lo = 1L << 30, hi = -1;
      for (unsigned mask = 0; mask < (1u << g); ++mask) {
        if (__builtin_popcount(mask) != slots) continue;
        long c = 0;
        for (int b = 0; b < g; ++b) {
          if (mask & (1u << b)) c += pool[idx[i + static_cast<std::size_t>(b)]].correct ? 1 : 0;
        }
        sum += c;
        ++count;
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      if (mode == Mode::pessimistic) return Q(fixed + lo);
      if (mode == Mode::optimistic) return Q(fixed + hi);
      return Q(fixed) + Q(sum, count);
    }
    i = j;
  }
  return Q(fixed);
}

inline Q top_correct(const std::vector<Item>& pool, int depth, Mode mode) {
  return pool.size() <= 7 ? top_correct_by_permutation(pool, depth, mode) : top_correct_by_subsets(pool, depth, mode);
}

/// Pair enumeration with half credit for ties.
inline std::optional<Q> auc(const std::vector<Item>& pool) {
  Q wins(0);
  long long pairs = 0;
  for (const auto& p : pool) {
    if (!p.correct) continue;
    for (const auto& n : pool) {
      if (n.correct) continue;
      ++pairs;
      if (p.score > n.score) wins += 1;
      if (p.score == n.score) wins += Q(1, 2);
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / Q(pairs);
}

inline Q half_indicator(Q a, Q b) { return a > b ? Q(1) : a == b ? Q(1, 2) : Q(0); }

inline Q mean(const std::vector<Q>& xs) {
  Q s(0);
  for (auto x : xs) s += x;
  return s / Q(static_cast<long long>(xs.size()));
}

/// 1-based average ranks by counting strictly smaller and equal values.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      if (x < v[i]) ++less;
      if (x == v[i]) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

/// Textbook Pearson correlation (two-pass).
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Binomial pmf vector for Bin(n, p).
inline std::vector<double> binomial_pmf(int n, double p) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    pmf[static_cast<std::size_t>(k)] =
        std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                 (n - k) * std::log1p(-p));
  }
  return pmf;
}

/// P(X >= Y) for independent X ~ Bin(n, p_low), Y ~ Bin(n, p_high).
inline double prob_low_reaches_high(int n, double p_low, double p_high) {
  auto x = binomial_pmf(n, p_low);
  auto y = binomial_pmf(n, p_high);
  double total = 0;
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= i; ++j) total += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(j)];
  }
  return total;
}

/// Expected |mean of n Bernoulli(p) draws - p| by exact enumeration.
inline double expected_abs_error(int n, double p) {
  auto pmf = binomial_pmf(n, p);
  double e = 0;
  for (int k = 0; k <= n; ++k) e += pmf[static_cast<std::size_t>(k)] * std::fabs(static_cast<double>(k) / n - p);
  return e;
}

}  // namespace oracle
