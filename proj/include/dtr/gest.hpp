#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dtr/model.hpp"
#include "dtr/nuisance.hpp"
#include "dtr/rng.hpp"
#include "dtr/smax.hpp"

namespace dtr {

/// Settings for fit_regime.
struct FitConfig {
  BetaSchedule beta_schedule;
  NuisanceSource nuisances = NuisanceSource::from_learner("forest");
  FitMode mode = FitMode::in_sample;
  int folds = 2;              ///< cross-fit uses exactly two folds
  double solver_ridge = 0.0;  ///< diagonal rescue for ill-conditioned Gram matrices
  std::uint64_t seed = 0;
};

inline constexpr double kMaxGramCondition = 1e12;

/// Solution of the linear moment (1/n) sum (response_i - c' design_i) design_i = 0.
struct LinearMomentSolution {
  Vector coef;
  Matrix gram;             ///< (1/n) design' design, ridged if `ridged`
  double condition = 0.0;  ///< condition number of the unridged Gram matrix
  double moment_norm = 0.0;
  bool ridged = false;
};

namespace detail {

inline double condition_number(const Matrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace detail

/// Closed-form solve of a linear estimating equation. Above a Gram condition
/// number of 1e12 the system is rescued with solver_ridge * trace/d on the
/// diagonal, or rejected when no ridge is configured.
inline LinearMomentSolution solve_linear_moment(const Matrix& design, const Vector& response, double solver_ridge,
                                                const std::string& period) {
  const Index n = design.rows(), d = design.cols();
  if (response.size() != n) throw DimensionError(period + " moment: response and design row counts differ");
  LinearMomentSolution out;
  out.gram = design.transpose() * design / static_cast<double>(n);
  const Vector rhs = design.transpose() * response / static_cast<double>(n);
  out.condition = detail::condition_number(out.gram);
  if (!(out.condition <= kMaxGramCondition)) {
    if (solver_ridge > 0.0 && out.gram.trace() > 0.0) {
      out.gram.diagonal().array() += solver_ridge * out.gram.trace() / static_cast<double>(d);
      out.ridged = true;
    }
    if (!out.ridged || !(detail::condition_number(out.gram) <= kMaxGramCondition))
      throw DegenerateDesign("degenerate " + period + " design (Gram condition number " +
                             std::to_string(out.condition) + ")");
  }
  out.coef = out.gram.ldlt().solve(rhs);
  out.moment_norm =
      (design.transpose() * (response - design * out.coef) / static_cast<double>(n)).lpNorm<Eigen::Infinity>();
  return out;
}

// ---------------------------------------------------------------------------
// Step 1: second-period parameter.

struct PsiEstimate {
  Vector psi;
  Vector y_check;
  Matrix phi_check;
  LinearMomentSolution solution;
};

/// Solves (1/n) sum (Ycheck_i - psi' Phicheck_i) Phicheck_i = 0 with
/// Ycheck = Y - h(X), Phicheck = phi(T2, X) - r(X).
inline PsiEstimate estimate_psi(const TrajectoryTable& data, const EvaluatedFeatures& f,
                                const SecondPeriodNuisances& nuisances, double solver_ridge = 0.0) {
  PsiEstimate out;
  out.y_check = data.y() - nuisances.h->predict(data.x()).col(0);
  out.phi_check = f.phi_obs - nuisances.r->predict(data.x());
  out.solution = solve_linear_moment(out.phi_check, out.y_check, solver_ridge, "second-period");
  out.psi = out.solution.coef;
  return out;
}

// ---------------------------------------------------------------------------
// Step 2: first-period parameter.

/// Per-row first-period quantities for a given psi, beta and fitted q, p1, p2.
struct FirstPeriodRows {
  Vector y_hat;        ///< Y - q(S)
  Matrix m_hat;        ///< mu(T1, S) - p1(S)
  Vector phi_hat;      ///< psi'phi(T2,X) - softmax - p2(S)
  Vector phi_hat_inf;  ///< psi'phi(T2,X) - max - p2(S)
  Vector p2;
  Matrix phi_inf;   ///< tie-averaged argmax feature
  Matrix phi_soft;  ///< Boltzmann-weighted feature
};

inline FirstPeriodRows first_period_rows(const TrajectoryTable& data, const EvaluatedFeatures& f, const Vector& psi,
                                         double beta, const Vector& q_pred, const Matrix& p1_pred,
                                         const Vector& p2_pred) {
  const Matrix scores = EvaluatedFeatures::scores(f.phi, psi);
  const Vector observed = f.phi_obs * psi;
  FirstPeriodRows out;
  out.y_hat = data.y() - q_pred;
  out.m_hat = f.mu_obs - p1_pred;
  out.p2 = p2_pred;
  out.phi_hat = observed - rowwise_softmax(scores, beta) - p2_pred;
  out.phi_hat_inf = observed - rowwise_max(scores) - p2_pred;
  out.phi_inf = rowwise_weighted_feature(f.phi, scores, kHardMax);
  out.phi_soft = std::isinf(beta) ? out.phi_inf : rowwise_weighted_feature(f.phi, scores, beta);
  return out;
}

struct ThetaEstimate {
  Vector theta;
  FirstPeriodRows rows;
  LinearMomentSolution solution;
};

/// Solves (1/n) sum (Yhat_i - Phihat_i - theta' Mhat_i) Mhat_i = 0.
inline ThetaEstimate estimate_theta(const TrajectoryTable& data, const EvaluatedFeatures& f, const Vector& psi,
                                    double beta, const FirstPeriodNuisances& nuisances, double solver_ridge = 0.0) {
  ThetaEstimate out;
  out.rows = first_period_rows(data, f, psi, beta, nuisances.q->predict(data.s()).col(0), nuisances.p1->predict(data.s()),
                               nuisances.p2->predict(data.s()).col(0));
  out.solution = solve_linear_moment(out.rows.m_hat, out.rows.y_hat - out.rows.phi_hat, solver_ridge, "first-period");
  out.theta = out.solution.coef;
  return out;
}

/// Empirical softmax-smoothed orthogonal moment
/// (1/n) sum {eps1_beta(theta, psi) - q(S) + p2(S) + theta' p1(S)} {mu(T1,S) - p1(S)},
/// eps1_beta = Y - psi'phi(T2,X) + softmax_t psi'phi(t,X) - theta' mu(T1,S),
/// with nuisances supplied as per-row predictions.
inline Vector moment_value(const TrajectoryTable& data, const EvaluatedFeatures& f, const Vector& theta,
                           const Vector& psi, const Vector& q_pred, const Matrix& p1_pred, const Vector& p2_pred,
                           double beta) {
  const Index n = data.rows();
  if (theta.size() != f.mu_dim() || psi.size() != f.phi_dim())
    throw DimensionError("theta/psi lengths do not match the feature maps");
  if (q_pred.size() != n || p1_pred.rows() != n || p1_pred.cols() != f.mu_dim() || p2_pred.size() != n)
    throw DimensionError("nuisance predictions do not match the data");
  const Matrix scores = EvaluatedFeatures::scores(f.phi, psi);
  const Vector eps1 = data.y() - f.phi_obs * psi + rowwise_softmax(scores, beta) - f.mu_obs * theta;
  const Vector left = eps1 - q_pred + p2_pred + p1_pred * theta;
  const Matrix right = f.mu_obs - p1_pred;
  return right.transpose() * left / static_cast<double>(n);
}

inline Vector moment_value(const TrajectoryTable& data, const EvaluatedFeatures& f, const Vector& theta,
                           const Vector& psi, const FirstPeriodNuisances& nuisances, double beta) {
  return moment_value(data, f, theta, psi, nuisances.q->predict(data.s()).col(0), nuisances.p1->predict(data.s()),
                      nuisances.p2->predict(data.s()).col(0), beta);
}

// ---------------------------------------------------------------------------
// Full procedure.

namespace detail {

inline double rms(const Matrix& m) {
  return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

template <class Dst, class Src>
void scatter_rows(Dst& dst, const Src& src, std::span<const Index> rows) {
  for (std::size_t j = 0; j < rows.size(); ++j) dst.row(rows[j]) = src.row(static_cast<Index>(j));
}

inline void scatter(Vector& dst, const Vector& src, std::span<const Index> rows) {
  for (std::size_t j = 0; j < rows.size(); ++j) dst(rows[j]) = src(static_cast<Index>(j));
}

inline void allocate(NuisanceResiduals& r, Index n, Index d_phi, Index d_mu) {
  r.y_check = Vector::Zero(n);
  r.phi_check = Matrix::Zero(n, d_phi);
  r.y_hat = Vector::Zero(n);
  r.m_hat = Matrix::Zero(n, d_mu);
  r.phi_hat = Vector::Zero(n);
  r.phi_hat_inf = Vector::Zero(n);
  r.p2 = Vector::Zero(n);
  r.phi_inf = Matrix::Zero(n, d_phi);
  r.phi_soft = Matrix::Zero(n, d_phi);
}

inline void store_first_period(NuisanceResiduals& r, const FirstPeriodRows& rows, std::span<const Index> idx) {
  scatter(r.y_hat, rows.y_hat, idx);
  scatter_rows(r.m_hat, rows.m_hat, idx);
  scatter(r.phi_hat, rows.phi_hat, idx);
  scatter(r.phi_hat_inf, rows.phi_hat_inf, idx);
  scatter(r.p2, rows.p2, idx);
  scatter_rows(r.phi_inf, rows.phi_inf, idx);
  scatter_rows(r.phi_soft, rows.phi_soft, idx);
}

inline std::vector<Index> shuffled(std::vector<Index> rows, Engine& rng) {
  std::shuffle(rows.begin(), rows.end(), rng);
  return rows;
}

inline std::vector<Index> sorted_slice(const std::vector<Index>& v, std::size_t begin, std::size_t end) {
  std::vector<Index> out(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end));
  std::sort(out.begin(), out.end());
  return out;
}

inline RegimeFit fit_in_sample(const TrajectoryTable& data, const EvaluatedFeatures& f, const FitConfig& config,
                               double beta) {
  RegimeFit fit;
  fit.beta = beta;
  fit.mode = FitMode::in_sample;
  fit.fold.assign(static_cast<std::size_t>(data.rows()), -1);

  const std::uint64_t seed = derive_seed(config.seed, {0xA11});
  const auto second = fit_second_period_nuisances(data, f, config.nuisances, seed);
  const auto psi_est = estimate_psi(data, f, second, config.solver_ridge);
  const auto first = fit_first_period_nuisances(data, f, psi_est.psi, beta, config.nuisances, seed);
  const auto theta_est = estimate_theta(data, f, psi_est.psi, beta, first, config.solver_ridge);

  auto& r = fit.residuals;
  r.y_check = psi_est.y_check;
  r.phi_check = psi_est.phi_check;
  r.y_hat = theta_est.rows.y_hat;
  r.m_hat = theta_est.rows.m_hat;
  r.phi_hat = theta_est.rows.phi_hat;
  r.phi_hat_inf = theta_est.rows.phi_hat_inf;
  r.p2 = theta_est.rows.p2;
  r.phi_inf = theta_est.rows.phi_inf;
  r.phi_soft = theta_est.rows.phi_soft;

  fit.params = {psi_est.psi, theta_est.theta};
  fit.psi_gram = psi_est.solution.gram;
  fit.theta_gram = theta_est.solution.gram;
  auto& diag = fit.diagnostics;
  diag.psi_moment_norm = psi_est.solution.moment_norm;
  diag.theta_moment_norm = theta_est.solution.moment_norm;
  diag.psi_condition = psi_est.solution.condition;
  diag.theta_condition = theta_est.solution.condition;
  diag.psi_ridged = psi_est.solution.ridged;
  diag.theta_ridged = theta_est.solution.ridged;
  diag.nuisance_rmse["p2"] = rms(first.p2_target - r.p2);
  return fit;
}

inline RegimeFit fit_crossfit(const TrajectoryTable& data, const EvaluatedFeatures& f, const FitConfig& config,
                              double beta) {
  const Index n = data.rows();
  if (config.folds != 2) throw Error("nested cross-fitting uses exactly two folds");
  if (n < 4 * config.folds)
    throw Error("nested cross-fitting needs n >= " + std::to_string(4 * config.folds) + ", got n=" + std::to_string(n));

  RegimeFit fit;
  fit.beta = beta;
  fit.mode = FitMode::nested_crossfit;
  fit.fold.assign(static_cast<std::size_t>(n), -1);
  auto& res = fit.residuals;
  allocate(res, n, f.phi_dim(), f.mu_dim());

  Engine rng = make_engine(config.seed, 0xC0FF);
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  const auto perm = shuffled(all, rng);
  const std::size_t half = static_cast<std::size_t>(n) / 2;
  const std::vector<std::vector<Index>> folds = {sorted_slice(perm, 0, half),
                                                 sorted_slice(perm, half, static_cast<std::size_t>(n))};
  for (int l = 0; l < 2; ++l)
    for (Index i : folds[static_cast<std::size_t>(l)]) fit.fold[static_cast<std::size_t>(i)] = l;

  // Step 1: nested split inside each fold; every row gets residuals from the
  // sub-fold it does not belong to.
  for (int l = 0; l < 2; ++l) {
    const auto& rows = folds[static_cast<std::size_t>(l)];
    const auto sub_perm = shuffled(rows, rng);
    const std::size_t sub_half = rows.size() / 2;
    const std::vector<std::vector<Index>> sub = {sorted_slice(sub_perm, 0, sub_half),
                                                 sorted_slice(sub_perm, sub_half, rows.size())};
    for (int lp = 0; lp < 2; ++lp) {
      const auto& train = sub[static_cast<std::size_t>(lp)];
      const auto& eval = sub[static_cast<std::size_t>(1 - lp)];
      const auto nu = fit_second_period_nuisances(data.select(train), f.select(train), config.nuisances,
                                                  derive_seed(config.seed, {0xB11, static_cast<std::uint64_t>(l),
                                                                            static_cast<std::uint64_t>(lp)}));
      const auto eval_data = data.select(eval);
      const auto eval_f = f.select(eval);
      scatter(res.y_check, Vector(eval_data.y() - nu.h->predict(eval_data.x()).col(0)), eval);
      scatter_rows(res.phi_check, Matrix(eval_f.phi_obs - nu.r->predict(eval_data.x())), eval);
    }
    Matrix design(static_cast<Index>(rows.size()), f.phi_dim());
    Vector response(static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      design.row(static_cast<Index>(j)) = res.phi_check.row(rows[j]);
      response(static_cast<Index>(j)) = res.y_check(rows[j]);
    }
    fit.fold_psi.push_back(
        solve_linear_moment(design, response, config.solver_ridge, "second-period (fold " + std::to_string(l + 1) + ")")
            .coef);
  }
  const auto psi_pooled = solve_linear_moment(res.phi_check, res.y_check, config.solver_ridge, "second-period");

  // Step 2: nuisances and psi^(l) from fold l, evaluated on the other fold.
  for (int l = 0; l < 2; ++l) {
    const auto& train = folds[static_cast<std::size_t>(l)];
    const auto& eval = folds[static_cast<std::size_t>(1 - l)];
    const Vector& psi_l = fit.fold_psi[static_cast<std::size_t>(l)];
    const auto train_data = data.select(train);
    const auto nu = fit_first_period_nuisances(train_data, f.select(train), psi_l, beta, config.nuisances,
                                               derive_seed(config.seed, {0xB22, static_cast<std::uint64_t>(l)}));
    const auto eval_data = data.select(eval);
    const auto eval_f = f.select(eval);
    const auto rows = first_period_rows(eval_data, eval_f, psi_l, beta, nu.q->predict(eval_data.s()).col(0),
                                        nu.p1->predict(eval_data.s()), nu.p2->predict(eval_data.s()).col(0));
    store_first_period(res, rows, eval);
    const Vector oof_target = p2_target(eval_f, psi_l, beta);
    fit.diagnostics.nuisance_rmse["p2_fold" + std::to_string(l + 1)] = rms(oof_target - rows.p2);
  }
  const auto theta_sol = solve_linear_moment(res.m_hat, res.y_hat - res.phi_hat, config.solver_ridge, "first-period");

  fit.params = {psi_pooled.coef, theta_sol.coef};
  fit.psi_gram = psi_pooled.gram;
  fit.theta_gram = theta_sol.gram;
  auto& diag = fit.diagnostics;
  diag.psi_moment_norm = psi_pooled.moment_norm;
  diag.theta_moment_norm = theta_sol.moment_norm;
  diag.psi_condition = psi_pooled.condition;
  diag.theta_condition = theta_sol.condition;
  diag.psi_ridged = psi_pooled.ridged;
  diag.theta_ridged = theta_sol.ridged;
  return fit;
}

}  // namespace detail

/// Two-step softmax G-estimation: psi-hat from the second-period moment, then
/// theta-hat^beta from the smoothed first-period orthogonal moment. Keeps all
/// per-row residuals for inference.
inline RegimeFit fit_regime(const TrajectoryTable& data, const EvaluatedFeatures& f, const FitConfig& config) {
  if (f.rows() != data.rows()) throw DimensionError("features were evaluated on a different table");
  const double beta = resolve_beta(config.beta_schedule, data.rows());
  RegimeFit fit = config.mode == FitMode::in_sample ? detail::fit_in_sample(data, f, config, beta)
                                                    : detail::fit_crossfit(data, f, config, beta);
  auto& r = fit.residuals;
  auto& diag = fit.diagnostics;
  diag.nuisance_rmse["h"] = detail::rms(r.y_check);
  diag.nuisance_rmse["r"] = detail::rms(r.phi_check);
  diag.nuisance_rmse["q"] = detail::rms(r.y_hat);
  diag.nuisance_rmse["p1"] = detail::rms(r.m_hat);
  return fit;
}

inline RegimeFit fit_regime(const TrajectoryTable& data, const FeatureMapPair& maps, const FitConfig& config) {
  return fit_regime(data, evaluate_features(data, maps), config);
}

}  // namespace dtr
