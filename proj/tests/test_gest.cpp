#include <gtest/gtest.h>

#include "dtr/dgp.hpp"
#include "dtr/gest.hpp"
#include "support.hpp"

using namespace dtr;
using namespace dtr::testing;

namespace {

/// Row predictions of q, p1, p2 recovered from an in-sample fit's residuals.
struct Predictions {
  Vector q;
  Matrix p1;
  Vector p2;
};

Predictions predictions_of(const TrajectoryTable& data, const EvaluatedFeatures& f, const RegimeFit& fit) {
  return {data.y() - fit.residuals.y_hat, f.mu_obs - fit.residuals.m_hat, fit.residuals.p2};
}

FitConfig forest_config(FitMode mode = FitMode::in_sample, std::uint64_t seed = 5) {
  FitConfig cfg;
  cfg.beta_schedule = {0.26, 1.0, false};
  cfg.nuisances = NuisanceSource::from_learner("forest:trees=30");
  cfg.mode = mode;
  cfg.seed = seed;
  return cfg;
}

/// Scenario oracle with Y replaced by a Y + b.
std::shared_ptr<OracleNuisances> affine_oracle(double alpha1, double alpha2, double a, double b) {
  auto base = scenario_oracle_nuisances(alpha1, alpha2);
  auto o = std::make_shared<OracleNuisances>(*base);
  o->h = [base, a, b](const Matrix& x) { return Vector((a * base->h(x)).array() + b); };
  o->q = [base, a, b](const Matrix& s) { return Vector((a * base->q(s)).array() + b); };
  return o;
}

}  // namespace

class ExactRecovery : public ::testing::TestWithParam<std::tuple<int, FitMode>> {};

TEST_P(ExactRecovery, OracleNuisancesRecoverTruth) {
  const auto [k, mode] = GetParam();
  const auto fx = make_linear_fixture(600, 31, k);
  const auto fit = fit_regime(fx.data, fx.features, oracle_config(fx.oracle, true, mode));
  EXPECT_LT(max_abs_diff(fit.params.psi, fx.psi0), 1e-8);
  EXPECT_LT(max_abs_diff(fit.params.theta, fx.theta0), 1e-8);
  EXPECT_LT(fit.diagnostics.psi_moment_norm, 1e-10);
  EXPECT_LT(fit.diagnostics.theta_moment_norm, 1e-10);
  EXPECT_FALSE(fit.diagnostics.psi_ridged);
  EXPECT_GT(fit.diagnostics.psi_condition, 0.0);
}

INSTANTIATE_TEST_SUITE_P(Modes, ExactRecovery,
                         ::testing::Combine(::testing::Values(2, 3),
                                            ::testing::Values(FitMode::in_sample, FitMode::nested_crossfit)));

TEST(EstimatePsi, ZeroOutcomeGivesZero) {
  const auto fx = make_linear_fixture(200, 3);
  const auto data = fx.data.with_outcome(Vector::Zero(fx.data.rows()));
  auto o = std::make_shared<OracleNuisances>(*fx.oracle);
  o->h = [](const Matrix& x) { return Vector(Vector::Zero(x.rows())); };
  const auto nu = fit_second_period_nuisances(data, fx.features, NuisanceSource::from_oracle(o), 0);
  const auto est = estimate_psi(data, fx.features, nu);
  EXPECT_TRUE(est.psi.isZero(0.0));
}

TEST(EstimatePsi, DegenerateDesignIsReported) {
  auto base = simulate({0.0, 0.0, 100, 1, 0});
  const TrajectoryTable data(base.s(), base.t1(), base.x(), std::vector<int>(100, 0), base.y(), 2);
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto nu = fit_second_period_nuisances(data, f, NuisanceSource::from_learner("ridge"), 0);
  try {
    estimate_psi(data, f, nu, 1e-6);
    FAIL() << "expected DegenerateDesign";
  } catch (const DegenerateDesign& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate second-period design"), std::string::npos);
  }
}

TEST(SolveLinearMoment, RidgeRescueIsFlagged) {
  Matrix design(50, 2);
  design.col(0) = Vector::LinSpaced(50, -1.0, 1.0);
  design.col(1) = design.col(0);
  const Vector response = design.col(0) * 2.0;
  EXPECT_THROW(solve_linear_moment(design, response, 0.0, "first-period"), DegenerateDesign);
  const auto sol = solve_linear_moment(design, response, 1e-8, "first-period");
  EXPECT_TRUE(sol.ridged);
  EXPECT_NEAR(sol.coef.sum(), 2.0, 1e-6);
  try {
    solve_linear_moment(Matrix::Zero(10, 2), Vector::Zero(10), 1e-3, "first-period");
    FAIL();
  } catch (const DegenerateDesign& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate first-period design"), std::string::npos);
  }
}

TEST(EstimateTheta, ZeroPsiCancelsSoftmax) {
  const auto data = simulate({1.0, 1.0, 500, 4, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto nu = fit_first_period_nuisances(data, f, Vector::Zero(2), 6.0, NuisanceSource::from_learner("forest"), 1);
  const auto est = estimate_theta(data, f, Vector::Zero(2), 6.0, nu);
  EXPECT_LT((est.rows.phi_hat + est.rows.p2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(est.rows.phi_hat.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EstimateTheta, InertSecondPeriodReducesToResidualOls) {
  const auto data = simulate({1.0, 0.0, 20000, 9, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto cfg = oracle_config(scenario_oracle_nuisances(1.0, 0.0), false);
  const auto fit = fit_regime(data, f, cfg);
  EXPECT_LT(fit.residuals.phi_hat.cwiseAbs().mean(), 0.05);
  const auto& r = fit.residuals;
  const Vector ols = (r.m_hat.transpose() * r.m_hat).ldlt().solve(r.m_hat.transpose() * r.y_hat);
  EXPECT_LT(max_abs_diff(fit.params.theta, ols), 0.02);
  EXPECT_LT(max_abs_diff(fit.params.theta, (Vector(2) << 1.0, 0.0).finished()), 0.1);
}

TEST(MomentValue, VanishesAtEstimatesWithFittedNuisances) {
  const auto data = simulate({1.0, 1.0, 800, 6, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto fit = fit_regime(data, f, forest_config());
  const auto p = predictions_of(data, f, fit);
  const Vector m = moment_value(data, f, fit.params.theta, fit.params.psi, p.q, p.p1, p.p2, fit.beta);
  EXPECT_LT(m.lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LT(fit.diagnostics.psi_moment_norm, 1e-10);
  EXPECT_LT(fit.diagnostics.theta_moment_norm, 1e-10);
}

TEST(MomentValue, NuisanceOverloadMatchesStepwiseEstimates) {
  const auto data = simulate({0.0, 1.0, 600, 8, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto src = NuisanceSource::from_learner("ridge");
  const auto second = fit_second_period_nuisances(data, f, src, 2);
  const auto psi = estimate_psi(data, f, second);
  const auto first = fit_first_period_nuisances(data, f, psi.psi, 5.0, src, 2);
  const auto theta = estimate_theta(data, f, psi.psi, 5.0, first);
  EXPECT_LT(moment_value(data, f, theta.theta, psi.psi, first, 5.0).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LT(psi.solution.moment_norm, 1e-10);
}

TEST(MomentValue, LinearInTheta) {
  const auto data = simulate({1.0, 1.0, 700, 7, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto fit = fit_regime(data, f, forest_config());
  const auto p = predictions_of(data, f, fit);
  const Vector delta = (Vector(2) << 0.3, -0.45).finished();
  const Vector m0 = moment_value(data, f, fit.params.theta, fit.params.psi, p.q, p.p1, p.p2, fit.beta);
  const Vector m1 = moment_value(data, f, fit.params.theta + delta, fit.params.psi, p.q, p.p1, p.p2, fit.beta);
  EXPECT_LT(max_abs_diff(m1 - m0, -fit.theta_gram * delta), 1e-12);
}

TEST(MomentValue, DimensionChecks) {
  const auto data = simulate({1.0, 1.0, 20, 7, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  EXPECT_THROW(moment_value(data, f, Vector::Zero(3), Vector::Zero(2), Vector::Zero(20), Matrix::Zero(20, 2),
                            Vector::Zero(20), 1.0),
               DimensionError);
  EXPECT_THROW(moment_value(data, f, Vector::Zero(2), Vector::Zero(2), Vector::Zero(19), Matrix::Zero(20, 2),
                            Vector::Zero(20), 1.0),
               DimensionError);
}

TEST(FitRegime, CrossfitSizeGuard) {
  const auto fx = make_linear_fixture(7, 1);
  EXPECT_THROW(fit_regime(fx.data, fx.features, oracle_config(fx.oracle, true, FitMode::nested_crossfit)), Error);
  const auto ok = make_linear_fixture(8, 1);
  EXPECT_NO_THROW(fit_regime(ok.data, ok.features, oracle_config(ok.oracle, true, FitMode::nested_crossfit)));
}

TEST(FitRegime, DeterministicForSameSeed) {
  const auto data = simulate({1.0, 1.0, 400, 2, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  for (auto mode : {FitMode::in_sample, FitMode::nested_crossfit}) {
    const auto a = fit_regime(data, f, forest_config(mode, 9));
    const auto b = fit_regime(data, f, forest_config(mode, 9));
    EXPECT_EQ(a.params.psi, b.params.psi);
    EXPECT_EQ(a.params.theta, b.params.theta);
    EXPECT_EQ(a.residuals.phi_hat, b.residuals.phi_hat);
    EXPECT_EQ(a.residuals.m_hat, b.residuals.m_hat);
    EXPECT_EQ(a.fold, b.fold);
  }
}

TEST(FitRegime, CrossfitRecordsFolds) {
  const auto data = simulate({1.0, 1.0, 203, 2, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto fit = fit_regime(data, f, forest_config(FitMode::nested_crossfit));
  ASSERT_EQ(fit.fold_psi.size(), 2u);
  const auto ones = std::count(fit.fold.begin(), fit.fold.end(), 1);
  EXPECT_EQ(std::count(fit.fold.begin(), fit.fold.end(), 0), 101);
  EXPECT_EQ(ones, 102);
  EXPECT_TRUE(fit.diagnostics.nuisance_rmse.count("p2_fold1"));
  FitConfig bad = forest_config(FitMode::nested_crossfit);
  bad.folds = 3;
  EXPECT_THROW(fit_regime(data, f, bad), Error);
}

TEST(FitRegime, AffineEquivarianceWithOracleNuisances) {
  const double a = 2.5, b = -1.3;
  const auto data = simulate({1.0, 1.0, 3000, 12, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto base = fit_regime(data, f, oracle_config(scenario_oracle_nuisances(1.0, 1.0), true));
  const auto moved_data = data.with_outcome((a * data.y()).array() + b);
  const auto moved = fit_regime(moved_data, f, oracle_config(affine_oracle(1.0, 1.0, a, b), true));
  EXPECT_LT(max_abs_diff(moved.params.psi, a * base.params.psi), 1e-9);
  EXPECT_LT(max_abs_diff(moved.params.theta, a * base.params.theta), 1e-9);
}

TEST(FitRegime, ThetaConvergesAsBetaGrows) {
  const auto data = simulate({1.0, 1.0, 2000, 13, 0});
  const auto f = evaluate_features(data, experiment_feature_maps());
  const auto oracle = scenario_oracle_nuisances(1.0, 1.0);
  auto at_beta = [&](double beta) {
    FitConfig cfg = oracle_config(oracle, std::isinf(beta));
    cfg.beta_schedule = std::isinf(beta) ? BetaSchedule::hard_max() : BetaSchedule{0.0, beta, false};
    return fit_regime(data, f, cfg).params.theta;
  };
  const Vector t3 = at_beta(1e3), t4 = at_beta(1e4), tinf = at_beta(kHardMax);
  EXPECT_LT(max_abs_diff(t3, t4), 1e-3);
  EXPECT_LT(max_abs_diff(t4, tinf), 1e-3);
  EXPECT_LE(max_abs_diff(t4, tinf), max_abs_diff(at_beta(10.0), tinf));
}
