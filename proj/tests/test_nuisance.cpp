#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dtr/dgp.hpp"
#include "dtr/nuisance.hpp"

using namespace dtr;

namespace {

Matrix random_inputs(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = normal(rng);
  return x;
}

double rmse(const Vector& a, const Vector& b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); }

}  // namespace

TEST(LearnerSpec, ParsesAndValidates) {
  const auto ridge = parse_learner_spec("ridge:degree=3,lambda=0.5");
  EXPECT_EQ(ridge.kind, LearnerSpec::Kind::ridge);
  EXPECT_EQ(ridge.param("degree", 0), 3.0);
  EXPECT_EQ(ridge.param("lambda", 0), 0.5);
  EXPECT_EQ(parse_learner_spec("knn").kind, LearnerSpec::Kind::knn);
  EXPECT_EQ(parse_learner_spec("forest:trees=10,depth=4").param("trees", 0), 10.0);
  const auto o = parse_learner_spec("oracle:dgp:alpha1=1,alpha2=0");
  EXPECT_EQ(o.kind, LearnerSpec::Kind::oracle);
  EXPECT_EQ(o.oracle_name, "dgp");
  EXPECT_EQ(o.param("alpha1", 0), 1.0);
  EXPECT_EQ(parse_learner_spec("forest:trees=10").to_string(), "forest:trees=10");
  EXPECT_THROW(parse_learner_spec("svm"), LearnerError);
  EXPECT_THROW(parse_learner_spec("knn:neighbours=3"), LearnerError);
  EXPECT_THROW(parse_learner_spec("ridge:lambda=abc"), LearnerError);
  EXPECT_THROW(parse_learner_spec("ridge:lambda"), LearnerError);
  EXPECT_THROW(parse_learner_spec("oracle"), LearnerError);
  EXPECT_THROW(make_regressor(parse_learner_spec("forest:trees=2.5"), 0), LearnerError);
  EXPECT_THROW(make_regressor(parse_learner_spec("forest:trees=0"), 0), LearnerError);
  EXPECT_THROW(NuisanceSource::from_learner("oracle:dgp"), LearnerError);
  EXPECT_THROW(nuisance_source("oracle:other"), LearnerError);
  EXPECT_THROW(nuisance_source("oracle:dgp:alpha3=1"), LearnerError);
  EXPECT_TRUE(nuisance_source("oracle:dgp:alpha1=1,alpha2=1").is_oracle());
}

TEST(Regressor, PredictRequiresFitAndMatchingWidth) {
  for (const char* spec : {"ridge", "knn", "forest:trees=5"}) {
    auto reg = make_regressor(parse_learner_spec(spec), 1);
    EXPECT_THROW(reg->predict(Matrix::Zero(3, 2)), LearnerError) << spec;
    reg->fit(random_inputs(40, 2, 1), Vector(Vector::LinSpaced(40, 0, 1)));
    EXPECT_THROW(reg->predict(Matrix::Zero(3, 3)), LearnerError) << spec;
    EXPECT_EQ(reg->predict(Matrix::Zero(3, 2)).cols(), 1) << spec;
  }
}

TEST(Regressor, DeterministicGivenSeed) {
  const Matrix x = random_inputs(300, 4, 2);
  const Vector y = x.col(0).array().sin() + x.col(1).array().square();
  const Matrix probe = random_inputs(50, 4, 3);
  for (const char* spec : {"ridge", "knn:k=7", "forest:trees=20"}) {
    auto a = make_regressor(parse_learner_spec(spec), 99);
    auto b = make_regressor(parse_learner_spec(spec), 99);
    a->fit(x, y);
    b->fit(x, y);
    EXPECT_EQ(a->predict(probe), b->predict(probe)) << spec;
  }
}

TEST(Regressor, VectorTargetsEqualScalarFits) {
  const Matrix x = random_inputs(250, 3, 4);
  Matrix y(250, 2);
  y.col(0) = x.col(0).array().cos();
  y.col(1) = x.col(1) + x.col(2);
  const Matrix probe = random_inputs(40, 3, 5);
  for (const char* spec : {"ridge", "knn:k=9", "forest:trees=15"}) {
    auto joint = make_regressor(parse_learner_spec(spec), 17);
    joint->fit(x, y);
    const Matrix pj = joint->predict(probe);
    for (Index c = 0; c < 2; ++c) {
      auto single = make_regressor(parse_learner_spec(spec), 17);
      single->fit(x, Vector(y.col(c)));
      EXPECT_EQ(Vector(pj.col(c)), Vector(single->predict(probe).col(0))) << spec << " column " << c;
    }
  }
}

TEST(Ridge, RecoversExactlyLinearTarget) {
  const Matrix x = random_inputs(200, 3, 6);
  const Vector y = (1.5 + 2.0 * x.col(0).array() - 0.7 * x.col(1).array() + 0.1 * x.col(2).array()).matrix();
  RidgeRegressor reg({1, 0.0});
  reg.fit(x, y);
  EXPECT_LT((reg.predict(x).col(0) - y).lpNorm<Eigen::Infinity>(), 1e-8);
  RidgeRegressor quad({2, 0.0});
  const Vector yq = y.array() + x.col(0).array() * x.col(1).array();
  quad.fit(x, yq);
  EXPECT_LT((quad.predict(x).col(0) - yq).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Ridge, SingularDesignIsReported) {
  Matrix x(5, 1);
  x.setConstant(1.0);
  x(0, 0) = 2.0;  // two distinct values cannot support degree 2 without penalty
  RidgeRegressor reg({3, 0.0});
  EXPECT_THROW(reg.fit(x, Vector(Vector::LinSpaced(5, 0, 1))), LearnerError);
}

TEST(Regressor, ConstantTargetIsReproduced) {
  const Matrix x = random_inputs(100, 2, 8);
  const Vector y = Vector::Constant(100, 3.25);
  for (const char* spec : {"ridge", "forest:trees=10", "knn"}) {
    auto reg = make_regressor(parse_learner_spec(spec), 1);
    reg->fit(x, y);
    EXPECT_LT((reg->predict(random_inputs(20, 2, 9)).array() - 3.25).abs().maxCoeff(), 1e-9) << spec;
  }
}

TEST(Knn, DefaultNeighbourCount) {
  EXPECT_EQ(KnnRegressor::default_k(10000), 1585);
  EXPECT_EQ(KnnRegressor::default_k(1), 1);
}

TEST(Forest, FitsASmoothFunction) {
  const Matrix x = random_inputs(2000, 3, 10);
  const Vector y = x.col(0).array().sin();
  RandomForestRegressor reg;
  reg.fit(x, y);
  const Matrix probe = random_inputs(500, 3, 11);
  EXPECT_LT(rmse(reg.predict(probe).col(0), probe.col(0).array().sin().matrix()), 0.15);
}

TEST(SecondPeriodNuisances, ConstantOutcome) {
  auto t = simulate({0.0, 0.0, 400, 1, 0});
  t = t.with_outcome(Vector::Constant(t.rows(), -2.0));
  const auto f = evaluate_features(t, experiment_feature_maps());
  for (const char* spec : {"ridge", "forest:trees=20"}) {
    const auto nu = fit_second_period_nuisances(t, f, NuisanceSource::from_learner(spec), 3);
    EXPECT_LT((nu.h->predict(t.x()).array() + 2.0).abs().maxCoeff(), 1e-9) << spec;
  }
}

TEST(SecondPeriodNuisances, KnnConditionalMeanAtLargeN) {
  const auto t = simulate({0.0, 0.0, 10000, 2, 0});
  const auto f = evaluate_features(t, experiment_feature_maps());
  // E[Y | X] = X1 here. The default k = n^0.8 oversmooths in five dimensions
  // but still beats the constant predictor (sd of X1 is sqrt(2)).
  auto err = [&](const char* spec) {
    const auto nu = fit_second_period_nuisances(t, f, NuisanceSource::from_learner(spec), 3);
    return rmse(nu.h->predict(t.x()).col(0), t.x().col(0));
  };
  EXPECT_LT(err("knn"), 0.8);
  EXPECT_LT(err("knn:k=50"), 0.35);
}

TEST(SecondPeriodNuisances, PropensityWhenTreatmentIsIndependent) {
  // T2 independent of X with P(T2 = 1) = 0.3.
  std::mt19937_64 rng(12);
  std::bernoulli_distribution coin(0.3);
  auto base = simulate({0.0, 0.0, 4000, 4, 0});
  std::vector<int> t2(static_cast<std::size_t>(base.rows()));
  for (auto& v : t2) v = coin(rng) ? 1 : 0;
  const TrajectoryTable t(base.s(), base.t1(), base.x(), t2, base.y(), 2);
  const auto f = evaluate_features(t, experiment_feature_maps());
  const auto nu = fit_second_period_nuisances(t, f, NuisanceSource::from_learner("ridge:degree=1"), 3);
  const double se = std::sqrt(0.3 * 0.7 / 4000.0);
  EXPECT_NEAR(nu.r->predict(t.x()).col(0).mean(), 0.3, 3.0 * se);
}

TEST(FirstPeriodNuisances, P2TargetWithZeroPsi) {
  const auto t = simulate({1.0, 1.0, 300, 5, 0});
  const auto f = evaluate_features(t, experiment_feature_maps());
  EXPECT_TRUE(p2_target(f, Vector::Zero(2), 6.0).isZero(0.0));
  const auto nu = fit_first_period_nuisances(t, f, Vector::Zero(2), 6.0, NuisanceSource::from_learner("forest"), 3);
  EXPECT_LT(nu.p2->predict(t.s()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FirstPeriodNuisances, HardMaxTargetRowByRow) {
  const auto t = simulate({1.0, 1.0, 200, 6, 0});
  const auto f = evaluate_features(t, experiment_feature_maps());
  const Vector psi = (Vector(2) << 0.4, -0.9).finished();
  const Vector target = p2_target(f, psi, kHardMax);
  for (Index i = 0; i < t.rows(); ++i) {
    const double s1 = psi(0) + psi(1) * t.x()(i, 0);
    const double observed = t.t2()[static_cast<std::size_t>(i)] == 1 ? s1 : 0.0;
    EXPECT_DOUBLE_EQ(target(i), observed - std::max(0.0, s1));
  }
}

TEST(FirstPeriodNuisances, SoftTargetWithinGapOfHardTarget) {
  const auto t = simulate({0.5, 1.0, 1000, 7, 0});
  const auto f = evaluate_features(t, experiment_feature_maps());
  const Vector psi = (Vector(2) << 1.0, 1.0).finished();
  const Vector hard = p2_target(f, psi, kHardMax);
  for (double beta : {1.0, 6.0, 100.0}) {
    const Vector soft = p2_target(f, psi, beta);
    EXPECT_GE((soft - hard).minCoeff(), -1e-12);
    EXPECT_LE((soft - hard).maxCoeff(), softmax_gap_bound(2, beta) + 1e-12);
  }
}

TEST(FirstPeriodNuisances, ForestP2BeatsTargetSpreadOutOfFold) {
  const auto train = simulate({0.0, 1.0, 10000, 8, 0});
  const auto test = simulate({0.0, 1.0, 10000, 8, 1});
  const auto maps = experiment_feature_maps();
  const auto ftrain = evaluate_features(train, maps), ftest = evaluate_features(test, maps);
  const Vector psi = Vector::Ones(2);
  const double beta = resolve_beta({0.26, 1.0, false}, 10000);
  const auto nu = fit_first_period_nuisances(train, ftrain, psi, beta, NuisanceSource::from_learner("forest"), 3);
  const Vector target = p2_target(ftest, psi, beta);
  const double sd = std::sqrt((target.array() - target.mean()).square().mean());
  EXPECT_LT(rmse(nu.p2->predict(test.s()).col(0), target), sd);
}

TEST(OracleNuisances, ErrorsNameTheMissingNuisance) {
  auto o = std::make_shared<OracleNuisances>();
  o->name = "partial";
  const auto src = NuisanceSource::from_oracle(o);
  const auto t = simulate({0.0, 0.0, 20, 1, 0});
  const auto f = evaluate_features(t, experiment_feature_maps());
  try {
    fit_second_period_nuisances(t, f, src, 0);
    FAIL() << "expected LearnerError";
  } catch (const LearnerError& e) {
    EXPECT_NE(std::string(e.what()).find("nuisance h"), std::string::npos) << e.what();
  }
}
