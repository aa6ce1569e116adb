#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "dtr/gest.hpp"
#include "dtr/model.hpp"
#include "dtr/smax.hpp"

namespace dtr {

/// Smoothed value estimate: mean of Y - psi'phi(T2,X) - theta'mu(T1,S)
/// + softmax_t psi'phi(t,X) + softmax_t theta'mu(t,S), both at the fit's beta.
inline double policy_value_estimate(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit) {
  const auto& [psi, theta] = fit.params;
  if (f.rows() != data.rows()) throw DimensionError("features were evaluated on a different table");
  const Vector adjusted = data.y() - f.phi_obs * psi - f.mu_obs * theta +
                          rowwise_softmax(EvaluatedFeatures::scores(f.phi, psi), fit.beta) +
                          rowwise_softmax(EvaluatedFeatures::scores(f.mu, theta), fit.beta);
  return adjusted.mean();
}

/// rho_psi(Z_i) = G_phi^{-1} (Ycheck_i - psi' Phicheck_i) Phicheck_i.
inline Matrix influence_psi(const RegimeFit& fit) {
  const auto& r = fit.residuals;
  const Vector resid = r.y_check - r.phi_check * fit.params.psi;
  const Matrix score = r.phi_check.array().colwise() * resid.array();
  return fit.psi_gram.ldlt().solve(score.transpose()).transpose();
}

/// Estimate of J*: mean of (phi_inf(X) - phi(T2, X)) Mhat', with phi_inf the
/// tie-averaged argmax feature under psi-hat.
inline Matrix j_star_estimate(const EvaluatedFeatures& f, const RegimeFit& fit) {
  const Matrix phi_inf = rowwise_weighted_feature(f.phi, EvaluatedFeatures::scores(f.phi, fit.params.psi), kHardMax);
  return (phi_inf - f.phi_obs).transpose() * fit.residuals.m_hat / static_cast<double>(f.rows());
}

/// rho_theta(Z_i) = G_mu^{-1} (m*_i + J*' rho_psi_i) with
/// m*_i = (Yhat_i - Phihat_inf_i - theta' Mhat_i) Mhat_i.
inline Matrix influence_theta(const EvaluatedFeatures& f, const RegimeFit& fit, const Matrix& rho_psi) {
  const auto& r = fit.residuals;
  if (rho_psi.rows() != f.rows() || rho_psi.cols() != f.phi_dim())
    throw DimensionError("rho_psi does not match the fit");
  const Vector resid = r.y_hat - r.phi_hat_inf - r.m_hat * fit.params.theta;
  const Matrix m_star = r.m_hat.array().colwise() * resid.array();
  const Matrix j_star = j_star_estimate(f, fit);
  const Matrix total = m_star + rho_psi * j_star;
  return fit.theta_gram.ldlt().solve(total.transpose()).transpose();
}

/// Hard-max adjusted outcomes Y*_adj under the fitted (psi, theta).
inline Vector adjusted_outcome_hard(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit) {
  const auto& [psi, theta] = fit.params;
  return data.y() - f.phi_obs * psi - f.mu_obs * theta + rowwise_max(EvaluatedFeatures::scores(f.phi, psi)) +
         rowwise_max(EvaluatedFeatures::scores(f.mu, theta));
}

/// rho_V(Z_i) = (Y*_adj,i - mean Y*_adj) + g_phi' rho_psi_i + g_mu' rho_theta_i, with
/// g_phi = mean(phi_inf - phi(T2,X)) and g_mu = mean(mu_inf - mu(T1,S)).
/// The correction terms are centered, so the values average to zero at any beta.
inline Vector influence_value(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit,
                              const Matrix& rho_psi, const Matrix& rho_theta) {
  const auto& [psi, theta] = fit.params;
  const double n = static_cast<double>(data.rows());
  const Vector adj = adjusted_outcome_hard(data, f, fit);
  const Matrix phi_inf = rowwise_weighted_feature(f.phi, EvaluatedFeatures::scores(f.phi, psi), kHardMax);
  const Matrix mu_inf = rowwise_weighted_feature(f.mu, EvaluatedFeatures::scores(f.mu, theta), kHardMax);
  const Vector g_phi = (phi_inf - f.phi_obs).colwise().sum().transpose() / n;
  const Vector g_mu = (mu_inf - f.mu_obs).colwise().sum().transpose() / n;
  const Vector correction = rho_psi * g_phi + rho_theta * g_mu;
  return (adj.array() - adj.mean() + correction.array() - correction.mean()).matrix();
}

struct InfluenceArrays {
  Matrix rho_psi;     ///< n x d_phi
  Matrix rho_theta;   ///< n x d_mu
  Vector rho_v;       ///< n
  Matrix j_star_hat;  ///< d_phi x d_mu
  Matrix phi_inf;     ///< n x d_phi, argmax feature under psi-hat
  Matrix mu_inf;      ///< n x d_mu, argmax feature under theta-hat
};

inline InfluenceArrays compute_influence(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit) {
  InfluenceArrays out;
  out.rho_psi = influence_psi(fit);
  out.rho_theta = influence_theta(f, fit, out.rho_psi);
  out.rho_v = influence_value(data, f, fit, out.rho_psi, out.rho_theta);
  out.j_star_hat = j_star_estimate(f, fit);
  out.phi_inf = rowwise_weighted_feature(f.phi, EvaluatedFeatures::scores(f.phi, fit.params.psi), kHardMax);
  out.mu_inf = rowwise_weighted_feature(f.mu, EvaluatedFeatures::scores(f.mu, fit.params.theta), kHardMax);
  return out;
}

// ---------------------------------------------------------------------------
// Confidence intervals.

/// z_{1 - alpha/2} for a two-sided interval at confidence `level` (e.g. 0.95).
inline double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// Plug-in standard deviation of influence values (divides by n).
inline double influence_sd(const Eigen::Ref<const Vector>& values) {
  if (values.size() == 0) return 0.0;
  const double mean = values.mean();
  return std::sqrt((values.array() - mean).square().sum() / static_cast<double>(values.size()));
}

struct Interval {
  double level = 0.95;
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return lo <= v && v <= hi; }
  double width() const { return hi - lo; }
};

struct ScalarInference {
  double estimate = 0.0;
  double sigma = 0.0;
  std::vector<Interval> intervals;  ///< one per requested level, in request order

  const Interval& at(double level) const {
    for (const auto& iv : intervals)
      if (std::abs(iv.level - level) < 1e-12) return iv;
    throw Error("no interval at level " + std::to_string(level));
  }
};

inline ScalarInference scalar_inference(double estimate, const Eigen::Ref<const Vector>& influence,
                                        const std::vector<double>& levels) {
  ScalarInference out;
  out.estimate = estimate;
  out.sigma = influence_sd(influence);
  const double root_n = std::sqrt(static_cast<double>(std::max<Index>(influence.size(), 1)));
  for (double level : levels) {
    const double half = normal_critical_value(level) * out.sigma / root_n;
    out.intervals.push_back({level, estimate - half, estimate + half});
  }
  return out;
}

struct InferenceReport {
  ScalarInference value;
  std::vector<ScalarInference> psi;    ///< per coordinate
  std::vector<ScalarInference> theta;  ///< per coordinate
  std::vector<double> levels;
  double beta = kHardMax;
  Index n = 0;
};

/// Point estimates with coordinatewise plug-in CIs at each confidence level.
inline InferenceReport build_report(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit,
                                    const InfluenceArrays& influence, const std::vector<double>& levels) {
  if (levels.empty()) throw Error("at least one confidence level is required");
  InferenceReport out;
  out.levels = levels;
  out.beta = fit.beta;
  out.n = data.rows();
  out.value = scalar_inference(policy_value_estimate(data, f, fit), influence.rho_v, levels);
  for (Index j = 0; j < fit.params.psi.size(); ++j)
    out.psi.push_back(scalar_inference(fit.params.psi(j), influence.rho_psi.col(j), levels));
  for (Index j = 0; j < fit.params.theta.size(); ++j)
    out.theta.push_back(scalar_inference(fit.params.theta(j), influence.rho_theta.col(j), levels));
  return out;
}

inline InferenceReport build_report(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit,
                                    const std::vector<double>& levels) {
  return build_report(data, f, fit, compute_influence(data, f, fit), levels);
}

}  // namespace dtr
