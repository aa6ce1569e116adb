#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "dtr/learners/forest.hpp"
#include "dtr/learners/knn.hpp"
#include "dtr/learners/regressor.hpp"
#include "dtr/learners/ridge.hpp"
#include "dtr/model.hpp"
#include "dtr/rng.hpp"
#include "dtr/smax.hpp"

namespace dtr {

// ---------------------------------------------------------------------------
// Learner specs: `ridge[:degree=..,lambda=..]`, `knn[:k=..]`,
// `forest[:trees=..,depth=..,leaf=..,mtry=..,bins=..]`, `oracle:<name>[:key=..]`.

struct LearnerSpec {
  enum class Kind { ridge, knn, forest, oracle };
  Kind kind = Kind::forest;
  std::string oracle_name;
  std::map<std::string, double> params;

  std::string to_string() const {
    std::string out;
    switch (kind) {
      case Kind::ridge: out = "ridge"; break;
      case Kind::knn: out = "knn"; break;
      case Kind::forest: out = "forest"; break;
      case Kind::oracle: out = "oracle:" + oracle_name; break;
    }
    std::string sep = ":";
    for (const auto& [key, value] : params) {
      out += sep + key + "=" + detail::format_double(value);
      sep = ",";
    }
    return out;
  }

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

inline LearnerSpec parse_learner_spec(std::string_view text) {
  LearnerSpec spec;
  auto colon = text.find(':');
  const std::string head(text.substr(0, colon));
  std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  std::vector<std::string> allowed;
  if (head == "ridge") {
    spec.kind = LearnerSpec::Kind::ridge;
    allowed = {"degree", "lambda"};
  } else if (head == "knn") {
    spec.kind = LearnerSpec::Kind::knn;
    allowed = {"k"};
  } else if (head == "forest") {
    spec.kind = LearnerSpec::Kind::forest;
    allowed = {"trees", "depth", "leaf", "mtry", "bins"};
  } else if (head == "oracle") {
    spec.kind = LearnerSpec::Kind::oracle;
    auto next = rest.find(':');
    spec.oracle_name = std::string(rest.substr(0, next));
    if (spec.oracle_name.empty()) throw LearnerError("oracle learner needs a name: oracle:<name>");
    rest = next == std::string_view::npos ? std::string_view{} : rest.substr(next + 1);
  } else {
    throw LearnerError("unknown learner '" + head + "' (expected ridge, knn, forest or oracle:<name>)");
  }
  while (!rest.empty()) {
    auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw LearnerError("learner option '" + std::string(item) + "' needs key=value");
    const std::string key(item.substr(0, eq));
    const auto value_text = item.substr(eq + 1);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (ec != std::errc() || ptr != value_text.data() + value_text.size() || !std::isfinite(value))
      throw LearnerError("learner option '" + key + "' has invalid value '" + std::string(value_text) + "'");
    if (spec.kind != LearnerSpec::Kind::oracle && std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw LearnerError("unknown option '" + key + "' for learner '" + head + "'");
    spec.params[key] = value;
  }
  return spec;
}

/// Builds an unfitted learner. `seed` only matters for the forest.
inline std::unique_ptr<Regressor> make_regressor(const LearnerSpec& spec, std::uint64_t seed) {
  auto as_int = [&](const char* key, double fallback) {
    const double v = spec.param(key, fallback);
    if (v != std::floor(v)) throw LearnerError(std::string("learner option '") + key + "' must be an integer");
    return static_cast<int>(v);
  };
  switch (spec.kind) {
    case LearnerSpec::Kind::ridge:
      return std::make_unique<RidgeRegressor>(
          RidgeRegressor::Options{as_int("degree", 2), spec.param("lambda", 1e-3)});
    case LearnerSpec::Kind::knn:
      return std::make_unique<KnnRegressor>(KnnRegressor::Options{as_int("k", 0)});
    case LearnerSpec::Kind::forest: {
      RandomForestRegressor::Options o;
      o.trees = as_int("trees", o.trees);
      o.max_depth = as_int("depth", o.max_depth);
      o.min_leaf = as_int("leaf", o.min_leaf);
      o.mtry = as_int("mtry", o.mtry);
      o.max_bins = as_int("bins", o.max_bins);
      o.seed = seed;
      return std::make_unique<RandomForestRegressor>(o);
    }
    case LearnerSpec::Kind::oracle: break;
  }
  throw LearnerError("oracle learners are supplied as closed-form nuisances, not built from a spec");
}

// ---------------------------------------------------------------------------
// Nuisance functions h = E(Y|X), r = E(phi(T2,X)|X), q = E(Y|S),
// p1 = E(mu(T1,S)|S), p2 = E(psi'phi(T2,X) - softmax_t psi'phi(t,X) | S).

enum class NuisanceKind { h, r, q, p1, p2 };

inline const char* to_string(NuisanceKind k) {
  switch (k) {
    case NuisanceKind::h: return "h";
    case NuisanceKind::r: return "r";
    case NuisanceKind::q: return "q";
    case NuisanceKind::p1: return "p1";
    case NuisanceKind::p2: return "p2";
  }
  return "?";
}

/// Closed-form nuisance functions, used in place of learners for exact-recovery
/// and orthogonality checks. Inputs are n x d_X (h, r) or n x d_S (q, p1, p2).
struct OracleNuisances {
  std::string name = "custom";
  std::function<Vector(const Matrix& x)> h;
  std::function<Matrix(const Matrix& x)> r;
  std::function<Vector(const Matrix& s)> q;
  std::function<Matrix(const Matrix& s)> p1;
  std::function<Vector(const Matrix& s, const Vector& psi, double beta)> p2;
};

/// Where nuisance estimates come from: a learner spec, or closed forms.
struct NuisanceSource {
  LearnerSpec learner;
  std::shared_ptr<const OracleNuisances> oracle;

  static NuisanceSource from_learner(std::string_view spec) {
    NuisanceSource src;
    src.learner = parse_learner_spec(spec);
    if (src.learner.kind == LearnerSpec::Kind::oracle)
      throw LearnerError("learner '" + std::string(spec) + "' needs closed-form nuisances; use from_oracle");
    return src;
  }
  static NuisanceSource from_oracle(std::shared_ptr<const OracleNuisances> o) {
    NuisanceSource src;
    src.learner.kind = LearnerSpec::Kind::oracle;
    src.learner.oracle_name = o->name;
    src.oracle = std::move(o);
    return src;
  }

  bool is_oracle() const { return static_cast<bool>(oracle); }
  std::string describe() const { return learner.to_string(); }

  /// Unfitted regressor for one nuisance. `psi` and `beta` only matter for
  /// an oracle p2, whose closed form depends on them.
  std::unique_ptr<Regressor> make(NuisanceKind kind, std::uint64_t seed, const Vector& psi = {},
                                  double beta = kHardMax) const {
    if (!oracle) return make_regressor(learner, seed);
    const auto& o = *oracle;
    auto need = [&](bool present) {
      if (!present) throw LearnerError("oracle '" + o.name + "' does not define nuisance " + to_string(kind));
    };
    switch (kind) {
      case NuisanceKind::h:
        need(static_cast<bool>(o.h));
        return std::make_unique<ClosedFormRegressor>(o.name + ".h", [f = o.h](const Matrix& x) { return Matrix(f(x)); });
      case NuisanceKind::r:
        need(static_cast<bool>(o.r));
        return std::make_unique<ClosedFormRegressor>(o.name + ".r", o.r);
      case NuisanceKind::q:
        need(static_cast<bool>(o.q));
        return std::make_unique<ClosedFormRegressor>(o.name + ".q", [f = o.q](const Matrix& s) { return Matrix(f(s)); });
      case NuisanceKind::p1:
        need(static_cast<bool>(o.p1));
        return std::make_unique<ClosedFormRegressor>(o.name + ".p1", o.p1);
      case NuisanceKind::p2:
        need(static_cast<bool>(o.p2));
        return std::make_unique<ClosedFormRegressor>(
            o.name + ".p2", [f = o.p2, psi, beta](const Matrix& s) { return Matrix(f(s, psi, beta)); });
    }
    throw LearnerError("unknown nuisance kind");
  }
};

using FittedRegressor = std::shared_ptr<const Regressor>;

struct SecondPeriodNuisances {
  FittedRegressor h;
  FittedRegressor r;
};

struct FirstPeriodNuisances {
  FittedRegressor q;
  FittedRegressor p1;
  FittedRegressor p2;
  Vector p2_target;  ///< psi'phi(T2,X) - softmax_t psi'phi(t,X) on the training rows
};

namespace detail {

inline FittedRegressor fit_one(const NuisanceSource& src, NuisanceKind kind, std::uint64_t seed, const Matrix& in,
                               const Matrix& target, const Vector& psi = {}, double beta = kHardMax) {
  auto reg = src.make(kind, derive_seed(seed, {static_cast<std::uint64_t>(kind)}), psi, beta);
  try {
    reg->fit(in, target);
  } catch (const LearnerError& e) {
    throw LearnerError(std::string("nuisance ") + to_string(kind) + " (" + reg->name() + "): " + e.what());
  }
  return FittedRegressor(std::move(reg));
}

}  // namespace detail

/// Per-row regression target for p2: observed second-period score minus its softmax.
inline Vector p2_target(const EvaluatedFeatures& f, const Vector& psi, double beta) {
  const Matrix scores = EvaluatedFeatures::scores(f.phi, psi);
  return f.phi_obs * psi - rowwise_softmax(scores, beta);
}

/// Fits h on (X -> Y) and r on (X -> phi(T2, X)).
inline SecondPeriodNuisances fit_second_period_nuisances(const TrajectoryTable& data, const EvaluatedFeatures& f,
                                                         const NuisanceSource& src, std::uint64_t seed) {
  SecondPeriodNuisances out;
  out.h = detail::fit_one(src, NuisanceKind::h, seed, data.x(), data.y());
  out.r = detail::fit_one(src, NuisanceKind::r, seed, data.x(), f.phi_obs);
  return out;
}

/// Fits q on (S -> Y), p1 on (S -> mu(T1, S)) and p2 on (S -> psi'phi(T2,X) -
/// softmax_t psi'phi(t,X)). p2 is refit for every (psi, beta).
inline FirstPeriodNuisances fit_first_period_nuisances(const TrajectoryTable& data, const EvaluatedFeatures& f,
                                                       const Vector& psi, double beta, const NuisanceSource& src,
                                                       std::uint64_t seed) {
  if (psi.size() != f.phi_dim()) throw DimensionError("psi length does not match phi dimension");
  FirstPeriodNuisances out;
  out.q = detail::fit_one(src, NuisanceKind::q, seed, data.s(), data.y());
  out.p1 = detail::fit_one(src, NuisanceKind::p1, seed, data.s(), f.mu_obs);
  out.p2_target = p2_target(f, psi, beta);
  out.p2 = detail::fit_one(src, NuisanceKind::p2, seed, data.s(), out.p2_target, psi, beta);
  return out;
}

}  // namespace dtr
