#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dtr/dtr.hpp"

namespace dtr::testing {

/// Noiseless linear trajectories where the oracle nuisances make both
/// estimating equations exact. X = (S1, S2, T1, W) carries S and T1, so
///   Y = psi0'phi(T2, X) - max_t psi0'phi(t, X) + theta0'mu(T1, S) + f2(S)
/// is psi0'phi(T2, X) plus a function of X. With h = psi0'r + f(X) and
/// q = theta0'p1 + f2 + p2 the residuals satisfy Ycheck = psi0'Phicheck and,
/// at beta = inf, Yhat - Phihat = theta0'Mhat for any r, p1, p2.
struct LinearFixture {
  TrajectoryTable data;
  FeatureMapPair maps;
  EvaluatedFeatures features;
  std::shared_ptr<OracleNuisances> oracle;
  Vector psi0;
  Vector theta0;
};

inline Vector fixture_phi(int t, const Vector& x) {
  Vector out(3);
  out << t, t * x(3), t * t * x(0);
  return out;
}

inline Vector fixture_mu(int t, const Vector& s) {
  Vector out(2);
  out << t, t * s(0);
  return out;
}

inline double fixture_f2(double s1, double s2) { return std::sin(s1) + 0.5 * s2 * s2; }

inline LinearFixture make_linear_fixture(Index n, std::uint64_t seed, int k = 2) {
  Engine rng = make_engine(seed, 17);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> label(0, k - 1);
  Vector psi0(3), theta0(2);
  psi0 << 0.7, -1.3, 0.4;
  theta0 << 1.5, -0.8;
  FeatureMapPair maps(fixture_phi, 3, fixture_mu, 2, k);

  Matrix s(n, 2), x(n, 4);
  std::vector<int> t1(static_cast<std::size_t>(n)), t2(static_cast<std::size_t>(n));
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    s.row(i) << normal(rng), normal(rng);
    const int a = label(rng), b = label(rng);
    x.row(i) << s(i, 0), s(i, 1), a, normal(rng);
    t1[static_cast<std::size_t>(i)] = a;
    t2[static_cast<std::size_t>(i)] = b;
    double best = 0.0;
    for (int t = 1; t < k; ++t) best = std::max(best, psi0.dot(fixture_phi(t, x.row(i).transpose())));
    y(i) = psi0.dot(fixture_phi(b, x.row(i).transpose())) - best + theta0.dot(fixture_mu(a, s.row(i).transpose())) +
           fixture_f2(s(i, 0), s(i, 1));
  }
  TrajectoryTable data(s, t1, x, t2, y, k);

  auto oracle = std::make_shared<OracleNuisances>();
  oracle->name = "linear_fixture";
  auto r_row = [k](const Vector& xi) {
    Vector acc = Vector::Zero(3);
    for (int t = 0; t < k; ++t) acc += fixture_phi(t, xi);
    return Vector(acc / k);
  };
  auto p1_row = [k](const Vector& si) {
    Vector acc = Vector::Zero(2);
    for (int t = 0; t < k; ++t) acc += fixture_mu(t, si);
    return Vector(acc / k);
  };
  auto p2_row = [](const Vector& si) { return 0.2 * std::sin(si(0)) - 0.1 * si(1); };
  oracle->r = [r_row](const Matrix& xm) {
    Matrix out(xm.rows(), 3);
    for (Index i = 0; i < xm.rows(); ++i) out.row(i) = r_row(xm.row(i).transpose()).transpose();
    return out;
  };
  oracle->h = [r_row, psi0, theta0, k](const Matrix& xm) {
    Vector out(xm.rows());
    for (Index i = 0; i < xm.rows(); ++i) {
      const Vector xi = xm.row(i).transpose();
      double best = 0.0;
      for (int t = 1; t < k; ++t) best = std::max(best, psi0.dot(fixture_phi(t, xi)));
      Vector si(2);
      si << xi(0), xi(1);
      out(i) = psi0.dot(r_row(xi)) - best + theta0.dot(fixture_mu(static_cast<int>(xi(2)), si)) +
               fixture_f2(xi(0), xi(1));
    }
    return out;
  };
  oracle->p1 = [p1_row](const Matrix& sm) {
    Matrix out(sm.rows(), 2);
    for (Index i = 0; i < sm.rows(); ++i) out.row(i) = p1_row(sm.row(i).transpose()).transpose();
    return out;
  };
  oracle->p2 = [p2_row](const Matrix& sm, const Vector&, double) {
    Vector out(sm.rows());
    for (Index i = 0; i < sm.rows(); ++i) out(i) = p2_row(sm.row(i).transpose());
    return out;
  };
  oracle->q = [p1_row, p2_row, theta0](const Matrix& sm) {
    Vector out(sm.rows());
    for (Index i = 0; i < sm.rows(); ++i) {
      const Vector si = sm.row(i).transpose();
      out(i) = theta0.dot(p1_row(si)) + fixture_f2(si(0), si(1)) + p2_row(si);
    }
    return out;
  };
  auto features = evaluate_features(data, maps);
  return {std::move(data), std::move(maps), std::move(features), std::move(oracle), psi0, theta0};
}

inline FitConfig oracle_config(const std::shared_ptr<const OracleNuisances>& oracle, bool hard_max = true,
                               FitMode mode = FitMode::in_sample) {
  FitConfig cfg;
  cfg.beta_schedule = hard_max ? BetaSchedule::hard_max() : BetaSchedule{0.26, 1.0, false};
  cfg.nuisances = NuisanceSource::from_oracle(oracle);
  cfg.mode = mode;
  return cfg;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

}  // namespace dtr::testing
