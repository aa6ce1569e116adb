#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "dtr/model.hpp"
#include "dtr/nuisance.hpp"
#include "dtr/rng.hpp"
#include "dtr/smax.hpp"

namespace dtr {

/// The binary two-period simulation model
///   S ~ N(0, I5), T1 ~ Bern(logistic(S1)), X = a1 T1 + S + N(0, I5),
///   T2 ~ Bern(logistic(X1)), Y = a2 (X1 + 1) T2 + X1 + N(0, 1).
struct ScenarioConfig {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  Index n = 1000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  ///< replication index; (seed, stream) selects the RNG stream
};

inline constexpr Index kScenarioStateDim = 5;

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline TrajectoryTable simulate(const ScenarioConfig& config) {
  if (config.n < 1) throw DataError("scenario needs n >= 1");
  const Index n = config.n, d = kScenarioStateDim;
  Engine rng = make_engine(config.seed, config.stream);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  Matrix s(n, d), x(n, d);
  std::vector<int> t1(static_cast<std::size_t>(n)), t2(static_cast<std::size_t>(n));
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) s(i, j) = normal(rng);
    const int a = unif(rng) < logistic(s(i, 0)) ? 1 : 0;
    for (Index j = 0; j < d; ++j) x(i, j) = config.alpha1 * a + s(i, j) + normal(rng);
    const int b = unif(rng) < logistic(x(i, 0)) ? 1 : 0;
    y(i) = config.alpha2 * (x(i, 0) + 1.0) * b + x(i, 0) + normal(rng);
    t1[static_cast<std::size_t>(i)] = a;
    t2[static_cast<std::size_t>(i)] = b;
  }
  return {std::move(s), std::move(t1), std::move(x), std::move(t2), std::move(y), 2};
}

// ---------------------------------------------------------------------------
// Ground truth.

inline double normal_cdf(double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); }
inline double normal_pdf(double v) { return std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi); }

/// g(x) = E[Z 1{Z >= 0}] for Z ~ N(x, 1), i.e. x Phi(x) + phi(x).
inline double truncated_mean_g(double x) {
  if (!std::isfinite(x)) throw Error("truncated_mean_g needs a finite argument");
  return x * normal_cdf(x) + normal_pdf(x);
}

/// E[max(0, a2 Z)] for Z ~ N(m, 1).
inline double positive_part_mean(double a2, double m) {
  if (a2 >= 0.0) return a2 * truncated_mean_g(m);
  return -a2 * truncated_mean_g(-m);
}

struct QuadraticFit {
  double kappa0 = 0.0, kappa1 = 0.0, kappa2 = 0.0;
  double max_abs_error = 0.0;  ///< over the fitting grid

  double operator()(double x) const { return kappa0 + kappa1 * x + kappa2 * x * x; }
};

/// Least-squares quadratic approximation of g on `points` equally spaced points of [lo, hi].
inline QuadraticFit quadratic_g_fit(double lo = -1.0, double hi = 4.0, int points = 500) {
  if (points < 3 || !(hi > lo)) throw Error("quadratic fit needs >= 3 points on a proper interval");
  Matrix design(points, 3);
  Vector target(points);
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    design.row(i) << 1.0, x, x * x;
    target(i) = truncated_mean_g(x);
  }
  const Vector c = design.colPivHouseholderQr().solve(target);
  QuadraticFit out{c(0), c(1), c(2), 0.0};
  out.max_abs_error = (design * c - target).lpNorm<Eigen::Infinity>();
  return out;
}

struct TrueBlips {
  Vector psi0;                                    ///< (a2, a2)
  std::function<double(int, const Vector&)> gamma1;  ///< exact first-period blip gamma1(t1, s)
  QuadraticFit g_quadratic;
};

/// Exact blips of the simulation model. gamma1 uses g, not its quadratic approximation.
inline TrueBlips true_blips(double alpha1, double alpha2) {
  TrueBlips out;
  out.psi0 = Vector::Constant(2, alpha2);
  out.gamma1 = [alpha1, alpha2](int t, const Vector& s) {
    const double base = s(0) + 1.0;
    return alpha1 * t + positive_part_mean(alpha2, alpha1 * t + base) - positive_part_mean(alpha2, base);
  };
  out.g_quadratic = quadratic_g_fit();
  return out;
}

/// Whether the first-period optimal treatment is the same for every state:
/// gamma1(1, s) = a1 (1 + a2 w(s)) for a weight w in (0, 1), so its sign is
/// constant unless 1 + a2 changes sign against 1.
inline std::optional<int> constant_first_period_rule(double alpha1, double alpha2) {
  if (alpha1 == 0.0) return 0;
  if (1.0 + std::min(alpha2, 0.0) >= 0.0) return alpha1 > 0.0 ? 1 : 0;
  return std::nullopt;
}

struct OracleValue {
  double value = 0.0;  ///< closed form when available, else Monte Carlo
  double standard_error = 0.0;
  std::string method;  ///< "closed_form" or "monte_carlo"
  std::optional<double> closed_form;
  double mc_value = 0.0;
  double mc_standard_error = 0.0;
  long mc_reps = 0;
};

/// V* for a constant first-period rule t1: X1 + 1 ~ N(a1 t1 + 1, 2), so
/// V* = a1 t1 + E[max(0, a2 (X1 + 1))].
inline double closed_form_value(double alpha1, double alpha2, int t1) {
  const double m = (alpha1 * t1 + 1.0) / std::numbers::sqrt2;
  return alpha1 * t1 + std::numbers::sqrt2 * positive_part_mean(alpha2, m);
}

/// Monte Carlo value of the optimal regime, by simulating the intervention
/// T1 = 1{gamma1(1, S) > 0}, T2 = 1{a2 (X1 + 1) > 0}. Also reports the closed
/// form when the first-period rule is constant.
inline OracleValue oracle_value(double alpha1, double alpha2, long mc_reps, std::uint64_t seed) {
  if (mc_reps < 2) throw Error("oracle_value needs at least 2 Monte Carlo draws");
  const auto blips = true_blips(alpha1, alpha2);
  Engine rng = make_engine(seed, 0x0AC1E);
  std::normal_distribution<double> normal;
  double sum = 0.0, sum_sq = 0.0;
  Vector s(1);
  for (long r = 0; r < mc_reps; ++r) {
    s(0) = normal(rng);
    const int t1 = blips.gamma1(1, s) > 0.0 ? 1 : 0;
    const double x1 = alpha1 * t1 + s(0) + normal(rng);
    const int t2 = alpha2 * (x1 + 1.0) > 0.0 ? 1 : 0;
    const double y = alpha2 * (x1 + 1.0) * t2 + x1 + normal(rng);
    sum += y;
    sum_sq += y * y;
  }
  OracleValue out;
  out.mc_reps = mc_reps;
  const double m = static_cast<double>(mc_reps);
  out.mc_value = sum / m;
  out.mc_standard_error = std::sqrt(std::max(0.0, sum_sq / m - out.mc_value * out.mc_value) / m);
  if (const auto rule = constant_first_period_rule(alpha1, alpha2)) {
    out.closed_form = closed_form_value(alpha1, alpha2, *rule);
    out.value = *out.closed_form;
    out.standard_error = 0.0;
    out.method = "closed_form";
  } else {
    out.value = out.mc_value;
    out.standard_error = out.mc_standard_error;
    out.method = "monte_carlo";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form nuisances of the simulation model, for oracle-mode fitting.

namespace detail {

/// E_e[f(m + e)] for e ~ N(0, 1).
template <class F>
double gaussian_expectation(F&& f, double m) {
  auto integrand = [&](double e) { return f(m + e) * normal_pdf(e); };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, -10.0, 10.0, 12, 1e-11);
}

/// Softmax over the two scores (0, a).
inline double binary_softmax(double a, double beta) {
  if (std::isinf(beta)) return std::max(a, 0.0);
  const double z = beta * a;
  return a * (z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)));
}

/// Mixes E[f(a1 t + s1 + e)] over T1 ~ Bern(logistic(s1)).
template <class F>
double first_period_mixture(F&& f, double alpha1, double s1) {
  const double p = logistic(s1);
  return (1.0 - p) * gaussian_expectation(f, s1) + p * gaussian_expectation(f, alpha1 + s1);
}

}  // namespace detail

inline std::shared_ptr<const OracleNuisances> scenario_oracle_nuisances(double alpha1, double alpha2) {
  auto o = std::make_shared<OracleNuisances>();
  o->name = "dgp:alpha1=" + detail::format_double(alpha1) + ",alpha2=" + detail::format_double(alpha2);
  auto h_of_x1 = [alpha2](double x1) { return alpha2 * (x1 + 1.0) * logistic(x1) + x1; };
  o->h = [h_of_x1](const Matrix& x) {
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) out(i) = h_of_x1(x(i, 0));
    return out;
  };
  o->r = [](const Matrix& x) {
    Matrix out(x.rows(), 2);
    for (Index i = 0; i < x.rows(); ++i) out.row(i) << logistic(x(i, 0)), x(i, 0) * logistic(x(i, 0));
    return out;
  };
  o->p1 = [](const Matrix& s) {
    Matrix out(s.rows(), 2);
    for (Index i = 0; i < s.rows(); ++i) out.row(i) << logistic(s(i, 0)), s(i, 0) * logistic(s(i, 0));
    return out;
  };
  o->q = [h_of_x1, alpha1](const Matrix& s) {
    Vector out(s.rows());
    for (Index i = 0; i < s.rows(); ++i) out(i) = detail::first_period_mixture(h_of_x1, alpha1, s(i, 0));
    return out;
  };
  o->p2 = [alpha1](const Matrix& s, const Vector& psi, double beta) {
    if (psi.size() != 2) throw DimensionError("scenario p2 oracle needs a length-2 psi");
    const double a = psi(0), b = psi(1);
    auto target = [a, b, beta](double x1) {
      const double score = a + b * x1;
      return logistic(x1) * score - detail::binary_softmax(score, beta);
    };
    Vector out(s.rows());
    for (Index i = 0; i < s.rows(); ++i) out(i) = detail::first_period_mixture(target, alpha1, s(i, 0));
    return out;
  };
  return o;
}

/// Parses `dgp:alpha1=..,alpha2=..` (the part after `oracle:`) into scenario nuisances.
inline std::shared_ptr<const OracleNuisances> oracle_from_spec(const LearnerSpec& spec) {
  if (spec.kind != LearnerSpec::Kind::oracle) throw LearnerError("not an oracle learner spec");
  if (spec.oracle_name != "dgp")
    throw LearnerError("unknown oracle '" + spec.oracle_name + "' (available: dgp:alpha1=..,alpha2=..)");
  for (const auto& [key, value] : spec.params)
    if (key != "alpha1" && key != "alpha2") throw LearnerError("unknown option '" + key + "' for oracle 'dgp'");
  return scenario_oracle_nuisances(spec.param("alpha1", 0.0), spec.param("alpha2", 0.0));
}

/// NuisanceSource from any learner spec string, resolving `oracle:dgp:...`.
inline NuisanceSource nuisance_source(std::string_view spec) {
  const auto parsed = parse_learner_spec(spec);
  if (parsed.kind == LearnerSpec::Kind::oracle) {
    auto src = NuisanceSource::from_oracle(oracle_from_spec(parsed));
    src.learner = parsed;
    return src;
  }
  return NuisanceSource::from_learner(spec);
}

}  // namespace dtr
