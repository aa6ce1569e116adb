#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include "dtr/error.hpp"
#include "dtr/model.hpp"

namespace dtr {

inline constexpr double kHardMax = std::numeric_limits<double>::infinity();

/// Scores within this distance of the maximum belong to the argmax tie set.
inline double tie_tolerance(double max_score) { return 1e-9 * (1.0 + std::abs(max_score)); }

/// Boltzmann softmax of K scores at temperature beta.
struct SoftmaxEval {
  double value = 0.0;  ///< sum_t W_t * score_t
  Vector weights;      ///< W_t = exp(beta s_t) / sum exp(beta s_u)
  Vector soft_argmax_feature;     ///< A = sum_t W_t phi(t); empty unless features were given
  Vector weight_derivative_term;  ///< Q = sum_t J_t phi(t); empty unless features were given
};

namespace detail {

inline void check_scores(const Vector& scores, double beta) {
  if (scores.size() < 1) throw DimensionError("softmax needs at least one score");
  if (!(beta > 0.0)) throw Error("softmax temperature must be positive");
  for (Index t = 0; t < scores.size(); ++t)
    if (!std::isfinite(scores(t))) throw Error("softmax score " + std::to_string(t) + " is not finite");
}

// Uniform weights over the tie set of the maximum.
inline Vector argmax_weights(const Vector& scores) {
  const double top = scores.maxCoeff();
  const double tol = tie_tolerance(top);
  Vector w = (scores.array() >= top - tol).cast<double>().matrix();
  return w / w.sum();
}

inline Vector boltzmann_weights(const Vector& scores, double beta) {
  if (std::isinf(beta)) return argmax_weights(scores);
  const double top = scores.maxCoeff();
  Vector w = (beta * (scores.array() - top)).exp().matrix();
  return w / w.sum();
}

inline void check_features(const Vector& psi, const Matrix& features) {
  if (features.rows() < 1) throw DimensionError("need features for at least one treatment");
  if (features.cols() != psi.size())
    throw DimensionError("feature dimension " + std::to_string(features.cols()) + " does not match psi length " +
                         std::to_string(psi.size()));
}

}  // namespace detail

/// Softmax of `scores`. beta = kHardMax gives the maximum with weights spread
/// uniformly over the (tolerance-based) tie set. Max-shift stabilized.
inline SoftmaxEval softmax(const Vector& scores, double beta) {
  detail::check_scores(scores, beta);
  SoftmaxEval out;
  out.weights = detail::boltzmann_weights(scores, beta);
  out.value = std::isinf(beta) ? scores.maxCoeff() : out.weights.dot(scores);
  return out;
}

/// J_t = W_t (U_t - sum_u W_u U_u) with U_t = beta * score_t, evaluated through
/// the pairwise form sum_u (U_t - U_u) W_u W_t so no exp(U) is ever formed.
/// Zero at beta = kHardMax.
inline Vector boltzmann_coefficients(const Vector& scores, double beta) {
  detail::check_scores(scores, beta);
  const Index k = scores.size();
  if (std::isinf(beta)) return Vector::Zero(k);
  const Vector w = detail::boltzmann_weights(scores, beta);
  Vector j = Vector::Zero(k);
  for (Index t = 0; t < k; ++t) {
    if (w(t) == 0.0) continue;
    double acc = 0.0;
    for (Index u = 0; u < k; ++u) acc += beta * (scores(t) - scores(u)) * w(u);
    j(t) = acc * w(t);
  }
  return j;
}

/// Weight-averaged feature sum_t W_t phi(t) with scores psi' phi(t).
/// `features` is K x d (row t = phi(t, x)).
inline Vector soft_argmax_feature(const Vector& psi, const Matrix& features, double beta) {
  detail::check_features(psi, features);
  const Vector w = softmax(features * psi, beta).weights;
  return features.transpose() * w;
}

/// Q = sum_t J_t phi(t): the part of the softmax gradient coming from the weights.
inline Vector weight_derivative_term(const Vector& psi, const Matrix& features, double beta) {
  detail::check_features(psi, features);
  return features.transpose() * boltzmann_coefficients(features * psi, beta);
}

/// All four softmax quantities for scores psi' phi(t). The gradient of the
/// softmax value in psi is soft_argmax_feature + weight_derivative_term.
inline SoftmaxEval evaluate_softmax(const Vector& psi, const Matrix& features, double beta) {
  detail::check_features(psi, features);
  const Vector scores = features * psi;
  SoftmaxEval out = softmax(scores, beta);
  out.soft_argmax_feature = features.transpose() * out.weights;
  out.weight_derivative_term = features.transpose() * boltzmann_coefficients(scores, beta);
  return out;
}

// Row-wise helpers over an n x K score matrix.

inline Vector rowwise_softmax(const Matrix& scores, double beta) {
  Vector out(scores.rows());
  for (Index i = 0; i < scores.rows(); ++i) out(i) = softmax(scores.row(i).transpose(), beta).value;
  return out;
}

inline Vector rowwise_max(const Matrix& scores) { return scores.rowwise().maxCoeff(); }

/// Row i = sum_t W_t(i) f[t](i) for the given temperature (kHardMax gives the
/// tie-averaged argmax feature).
inline Matrix rowwise_weighted_feature(const std::vector<Matrix>& f, const Matrix& scores, double beta) {
  Matrix out = Matrix::Zero(scores.rows(), f.front().cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const Vector w = softmax(scores.row(i).transpose(), beta).weights;
    for (std::size_t t = 0; t < f.size(); ++t)
      if (w(static_cast<Index>(t)) != 0.0) out.row(i) += w(static_cast<Index>(t)) * f[t].row(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temperature schedule.

/// beta = scale * n^exponent, or the hard maximum.
struct BetaSchedule {
  double exponent = 0.26;
  double scale = 1.0;
  bool infinite = false;

  static BetaSchedule hard_max() { return {0.0, 1.0, true}; }
};

inline double resolve_beta(const BetaSchedule& schedule, Index n) {
  if (n < 1) throw Error("sample size must be positive");
  if (schedule.infinite) return kHardMax;
  if (!(schedule.scale > 0.0)) throw Error("beta scale must be positive");
  return schedule.scale * std::pow(static_cast<double>(n), schedule.exponent);
}

/// The rate window beta = omega(n^{1/4}), beta = o(n^{1/2}) that applies when
/// the score gaps have a bounded density.
inline bool exponent_in_valid_window(double exponent) { return exponent > 0.25 && exponent < 0.5; }

// ---------------------------------------------------------------------------
// Numerical check of the bias building block: for nonnegative U with density
// f(u) <= H / u^{1-delta} near zero, E[U exp(-beta U)] is at most
// H / beta^{1+delta} + (1+eps) log(beta) / beta^{2+eps}.

struct BiasBlockCheck {
  double empirical_mean = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;
  bool holds = false;
};

inline BiasBlockCheck bias_building_block_check(std::span<const double> samples, double beta, double h,
                                                double delta, double epsilon = 0.5) {
  if (!(beta > 0.0) || (1.0 + epsilon) * std::log(beta) <= 1.0)
    throw Error("beta too small for the bias bound: need (1+eps) log(beta) > 1");
  if (samples.empty()) throw Error("bias check needs samples");
  const auto m = static_cast<double>(samples.size());
  double sum = 0.0, sum_sq = 0.0;
  for (double u : samples) {
    if (u < 0.0 || !std::isfinite(u)) throw Error("bias check samples must be finite and nonnegative");
    const double v = u * std::exp(-beta * u);
    sum += v;
    sum_sq += v * v;
  }
  BiasBlockCheck out;
  out.empirical_mean = sum / m;
  const double var = std::max(0.0, sum_sq / m - out.empirical_mean * out.empirical_mean);
  out.standard_error = std::sqrt(var / m);
  out.bound = h / std::pow(beta, 1.0 + delta) + (1.0 + epsilon) * std::log(beta) / std::pow(beta, 2.0 + epsilon);
  out.holds = out.empirical_mean <= out.bound + 3.0 * out.standard_error;
  return out;
}

/// Upper bound K / (e beta) on max - softmax for K scores.
inline double softmax_gap_bound(Index k, double beta) {
  return std::isinf(beta) ? 0.0 : static_cast<double>(k) / (std::numbers::e * beta);
}

}  // namespace dtr
