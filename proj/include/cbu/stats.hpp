#pragma once

// Rollout-budget bootstrap, logistic-regression correctness probes and rank
// correlation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cbu/error.hpp"

namespace cbu {

// ---------------------------------------------------------------------------
// Bootstrap error curves

struct RolloutPool {
  std::vector<double> unit_scores;
  double lower = 0.0;
  double upper = 1.0;
};

struct ErrorPoint {
  int n = 0;
  double mean_normalized_error = 0.0;
  int resamples = 0;
};

struct ErrorCurve {
  std::vector<ErrorPoint> points;
};

enum class BootstrapMode { with_replacement, without_replacement };

inline std::string_view to_string(BootstrapMode m) {
  return m == BootstrapMode::with_replacement ? "with_replacement" : "without_replacement";
}

inline BootstrapMode parse_bootstrap_mode(std::string_view s) {
  if (s == "with_replacement") return BootstrapMode::with_replacement;
  if (s == "without_replacement") return BootstrapMode::without_replacement;
  throw Error(ErrorKind::config, "unknown bootstrap mode '" + std::string(s) + "'");
}

inline constexpr int default_bootstrap_resamples = 200;
inline const std::vector<int> default_bootstrap_budgets = {4, 8, 16, 32, 64};

namespace detail {

// Unbiased draw from [0, bound) by rejection; avoids relying on the
// implementation-defined std::uniform_int_distribution.
inline std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound) {
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// For each budget n: mean over resamples of |mean of n sampled units - pool
/// mean| / (upper - lower). Each n uses its own seeded stream.
inline ErrorCurve bootstrap_error(const RolloutPool& pool, const std::vector<int>& n_values, int resamples,
                                  BootstrapMode mode, std::uint64_t seed) {
  const auto& units = pool.unit_scores;
  if (units.empty()) throw Error(ErrorKind::argument, "rollout pool is empty");
  if (!(pool.upper > pool.lower)) throw Error(ErrorKind::argument, "scale upper bound must exceed lower bound");
  if (resamples < 1) throw Error(ErrorKind::argument, "resamples must be >= 1");
  for (double u : units) {
    if (!(u >= pool.lower && u <= pool.upper)) throw Error(ErrorKind::argument, "unit score outside scale");
  }
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    int n = n_values[i];
    if (n < 1) throw Error(ErrorKind::argument, "budget n must be >= 1");
    if (i > 0 && n <= n_values[i - 1]) throw Error(ErrorKind::argument, "budgets must be strictly increasing");
    if (mode == BootstrapMode::without_replacement && static_cast<std::size_t>(n) > units.size()) {
      throw Error(ErrorKind::argument,
                  "budget " + std::to_string(n) + " exceeds pool size " + std::to_string(units.size()));
    }
  }

  const double full = std::accumulate(units.begin(), units.end(), 0.0) / static_cast<double>(units.size());
  const double range = pool.upper - pool.lower;
  ErrorCurve curve;
  std::vector<std::size_t> perm(units.size());
  for (int n : n_values) {
    auto rng = detail::stream_rng(seed, static_cast<std::uint64_t>(n));
    double total = 0.0;
    for (int r = 0; r < resamples; ++r) {
      double sum = 0.0;
      if (mode == BootstrapMode::with_replacement) {
        for (int k = 0; k < n; ++k) sum += units[detail::draw_below(rng, units.size())];
      } else {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        // Partial Fisher-Yates: the first n slots become a uniform subset.
        for (int k = 0; k < n; ++k) {
          auto j = static_cast<std::size_t>(k) + detail::draw_below(rng, units.size() - static_cast<std::size_t>(k));
          std::swap(perm[static_cast<std::size_t>(k)], perm[j]);
          sum += units[perm[static_cast<std::size_t>(k)]];
        }
      }
      total += std::fabs(sum / n - full) / range;
    }
    curve.points.push_back({n, total / resamples, resamples});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Logistic-regression probe

inline constexpr double default_probe_regularization = 1e-4;

struct ProbeOptions {
  double regularization = default_probe_regularization;
  double gradient_tolerance = 1e-8;
  int max_iterations = 200;
};

struct ProbeModel {
  std::vector<std::string> feature_names;
  Eigen::VectorXd weights;  // on standardized features
  double bias = 0.0;
  double regularization = default_probe_regularization;
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> loss_history;  // one entry per accepted step, starting at init

  /// Logit for one raw (unstandardized) feature row.
  double logit(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    Eigen::RowVectorXd z = (x - feature_mean.transpose()).cwiseQuotient(feature_scale.transpose());
    return z.dot(weights.transpose()) + bias;
  }
  int predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return logit(x) >= 0.0 ? 1 : 0; }
};

/// Mean negative log-likelihood plus (lambda/2)|w|^2 over standardized
/// features. The bias is not penalized. `params` = [w; b].
class ProbeObjective {
 public:
  ProbeObjective(Eigen::MatrixXd z, Eigen::VectorXd y, double lambda)
      : z_(std::move(z)), y_(std::move(y)), lambda_(lambda) {}

  Eigen::Index dim() const { return z_.cols() + 1; }

  double loss(const Eigen::VectorXd& params) const {
    Eigen::VectorXd eta = logits(params);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) sum += softplus(eta[i]) - y_[i] * eta[i];
    auto w = params.head(z_.cols());
    return sum / static_cast<double>(z_.rows()) + 0.5 * lambda_ * w.squaredNorm();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& params) const {
    Eigen::VectorXd resid = probabilities(params) - y_;
    const double n = static_cast<double>(z_.rows());
    Eigen::VectorXd g(dim());
    g.head(z_.cols()) = z_.transpose() * resid / n + lambda_ * params.head(z_.cols());
    g[z_.cols()] = resid.sum() / n;
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::VectorXd& params) const {
    Eigen::VectorXd p = probabilities(params);
    Eigen::VectorXd wdiag = p.array() * (1.0 - p.array());
    Eigen::MatrixXd za(z_.rows(), dim());
    za.leftCols(z_.cols()) = z_;
    za.col(z_.cols()).setOnes();
    Eigen::MatrixXd h = za.transpose() * wdiag.asDiagonal() * za / static_cast<double>(z_.rows());
    for (Eigen::Index j = 0; j < z_.cols(); ++j) h(j, j) += lambda_;
    return h;
  }

  static double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
  static double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
  }

 private:
  Eigen::VectorXd logits(const Eigen::VectorXd& params) const {
    return (z_ * params.head(z_.cols())).array() + params[z_.cols()];
  }
  Eigen::VectorXd probabilities(const Eigen::VectorXd& params) const {
    return logits(params).unaryExpr([](double t) { return sigmoid(t); });
  }

  Eigen::MatrixXd z_;
  Eigen::VectorXd y_;
  double lambda_;
};

namespace detail {

inline void check_probe_inputs(const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  if (x.cols() < 1) throw Error(ErrorKind::argument, "probe needs at least one feature");
  if (x.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorKind::argument, "feature rows and label count differ");
  }
  if (!x.allFinite()) throw Error(ErrorKind::argument, "features contain non-finite values");
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorKind::argument, "labels must be 0 or 1");
  }
}

}  // namespace detail

/// Damped Newton with Armijo backtracking; falls back to a gradient step when
/// the Newton direction is unusable. Converges at |grad| <= tolerance.
inline ProbeModel fit_probe(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                            const ProbeOptions& opt = {}, std::vector<std::string> feature_names = {}) {
  detail::check_probe_inputs(x, labels);
  auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<long>(labels.size())) {
    throw Error(ErrorKind::argument, "probe needs at least one sample of each class");
  }
  if (opt.regularization < 0) throw Error(ErrorKind::argument, "regularization must be >= 0");

  ProbeModel model;
  model.regularization = opt.regularization;
  model.feature_names = std::move(feature_names);
  model.feature_mean = x.colwise().mean().transpose();
  Eigen::MatrixXd centered = x.rowwise() - model.feature_mean.transpose();
  model.feature_scale = (centered.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < model.feature_scale.size(); ++j) {
    if (!(model.feature_scale[j] > 0)) model.feature_scale[j] = 1.0;
  }
  Eigen::MatrixXd z = centered.array().rowwise() / model.feature_scale.transpose().array();
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y[static_cast<Eigen::Index>(i)] = labels[i];

  ProbeObjective f(z, y, opt.regularization);
  Eigen::VectorXd params = Eigen::VectorXd::Zero(f.dim());
  double loss = f.loss(params);
  model.loss_history.push_back(loss);

  Eigen::VectorXd g = f.gradient(params);
  int it = 0;
  for (; it < opt.max_iterations && g.norm() > opt.gradient_tolerance; ++it) {
    Eigen::VectorXd dir;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(f.hessian(params));
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) dir = -ldlt.solve(g);
    if (dir.size() == 0 || !dir.allFinite() || dir.dot(g) >= 0) dir = -g;

    double step = 1.0;
    const double slope = dir.dot(g);
    Eigen::VectorXd trial;
    double trial_loss = loss;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      trial = params + step * dir;
      trial_loss = f.loss(trial);
      if (trial_loss <= loss + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease representable in double
    params = trial;
    loss = trial_loss;
    model.loss_history.push_back(loss);
    g = f.gradient(params);
  }

  model.iterations = it;
  model.gradient_norm = g.norm();
  model.weights = params.head(z.cols());
  model.bias = params[z.cols()];
  if (model.gradient_norm > opt.gradient_tolerance) {
    throw Error(ErrorKind::convergence, "probe did not converge after " + std::to_string(it) +
                                            " iterations; gradient norm " + std::to_string(model.gradient_norm) +
                                            ", loss " + std::to_string(loss));
  }
  return model;
}

inline double probe_accuracy(const ProbeModel& model, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  detail::check_probe_inputs(x, labels);
  if (x.cols() != model.weights.size()) throw Error(ErrorKind::argument, "feature dimension mismatch");
  if (labels.empty()) throw Error(ErrorKind::argument, "no samples");
  long hits = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (model.predict(x.row(i)) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

enum class ProbeProtocol { in_sample, k_fold };

struct ProbeEvaluation {
  ProbeProtocol protocol = ProbeProtocol::k_fold;
  int folds = 5;
  std::uint64_t seed = 0;
};

inline constexpr int default_probe_folds = 5;

/// Stratified k-fold accuracy: each fold is predicted by a model refit on
/// the remaining folds. Fold membership is a seeded shuffle within each class.
inline double cross_validated_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& labels, int k,
                                       const ProbeOptions& opt = {}, std::uint64_t seed = 0) {
  detail::check_probe_inputs(x, labels);
  if (k < 2) throw Error(ErrorKind::argument, "k-fold needs k >= 2");
  std::vector<int> fold(labels.size(), 0);
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorKind::argument, "class " + std::to_string(cls) + " has fewer samples than folds");
    }
    auto rng = detail::stream_rng(seed, static_cast<std::uint64_t>(cls));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[detail::draw_below(rng, i)]);
    for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
  }

  long hits = 0;
  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xtr(static_cast<Eigen::Index>(train.size()), x.cols());
    std::vector<int> ytr;
    for (std::size_t r = 0; r < train.size(); ++r) {
      xtr.row(static_cast<Eigen::Index>(r)) = x.row(train[r]);
      ytr.push_back(labels[static_cast<std::size_t>(train[r])]);
    }
    auto model = fit_probe(xtr, ytr, opt);
    for (auto i : test) {
      if (model.predict(x.row(i)) == labels[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Accuracy under the requested protocol. For k-fold the model only supplies
/// its regularization; every fold is refit.
inline double probe_accuracy(const ProbeModel& model, const Eigen::MatrixXd& x, const std::vector<int>& labels,
                             const ProbeEvaluation& eval) {
  if (eval.protocol == ProbeProtocol::in_sample) return probe_accuracy(model, x, labels);
  if (x.cols() != model.weights.size()) throw Error(ErrorKind::argument, "feature dimension mismatch");
  ProbeOptions opt;
  opt.regularization = model.regularization;
  return cross_validated_accuracy(x, labels, eval.folds, opt, eval.seed);
}

// ---------------------------------------------------------------------------
// Spearman rank correlation

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

struct Correlation {
  std::optional<double> value;
  std::string reason;
};

/// Pearson correlation of average ranks.
inline Correlation spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::argument, "spearman inputs differ in length");
  if (a.size() < 2) throw Error(ErrorKind::argument, "spearman needs at least two observations");
  auto ra = average_ranks(a);
  auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;  // average ranks always sum to n(n+1)/2
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0) return {std::nullopt, "first input has zero rank variance"};
  if (sbb == 0.0) return {std::nullopt, "second input has zero rank variance"};
  double rho = sab / std::sqrt(saa * sbb);
  return {std::clamp(rho, -1.0, 1.0), {}};
}

}  // namespace cbu
