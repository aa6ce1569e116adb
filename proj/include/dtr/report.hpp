#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtr/gest.hpp"
#include "dtr/infer.hpp"
#include "dtr/model.hpp"

namespace dtr {

namespace detail {

inline nlohmann::json to_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// JSON has no infinity; the hard maximum is written as the string "inf".
inline nlohmann::json beta_to_json(double beta) {
  if (std::isinf(beta)) return "inf";
  return beta;
}

inline nlohmann::json to_json(const ScalarInference& s) {
  nlohmann::json out{{"estimate", s.estimate}, {"sigma", s.sigma}};
  auto& ivs = out["intervals"] = nlohmann::json::array();
  for (const auto& iv : s.intervals) ivs.push_back({{"level", iv.level}, {"lo", iv.lo}, {"hi", iv.hi}});
  return out;
}

}  // namespace detail

inline nlohmann::json config_to_json(const FitConfig& c) {
  nlohmann::json beta;
  if (c.beta_schedule.infinite) {
    beta = "inf";
  } else {
    beta = {{"exponent", c.beta_schedule.exponent}, {"scale", c.beta_schedule.scale}};
  }
  return {{"beta_schedule", beta},
          {"learner", c.nuisances.describe()},
          {"mode", to_string(c.mode)},
          {"folds", c.folds},
          {"solver_ridge", c.solver_ridge},
          {"seed", c.seed}};
}

inline nlohmann::json diagnostics_to_json(const FitDiagnostics& d) {
  nlohmann::json out{{"psi_moment_norm", d.psi_moment_norm},     {"theta_moment_norm", d.theta_moment_norm},
                     {"psi_condition", d.psi_condition},         {"theta_condition", d.theta_condition},
                     {"psi_ridged", d.psi_ridged},               {"theta_ridged", d.theta_ridged}};
  out["nuisance_rmse"] = nlohmann::json::object();
  for (const auto& [k, v] : d.nuisance_rmse) out["nuisance_rmse"][k] = v;
  return out;
}

/// Structured report: estimates, intervals, beta, diagnostics and the config echo.
inline nlohmann::json report_to_json(const RegimeFit& fit, const InferenceReport& report, const FitConfig& config) {
  nlohmann::json out;
  out["n"] = report.n;
  out["beta"] = detail::beta_to_json(report.beta);
  out["levels"] = report.levels;
  out["value"] = detail::to_json(report.value);
  out["psi"] = nlohmann::json::array();
  for (const auto& s : report.psi) out["psi"].push_back(detail::to_json(s));
  out["theta"] = nlohmann::json::array();
  for (const auto& s : report.theta) out["theta"].push_back(detail::to_json(s));
  out["diagnostics"] = diagnostics_to_json(fit.diagnostics);
  if (!fit.fold_psi.empty()) {
    out["fold_psi"] = nlohmann::json::array();
    for (const auto& p : fit.fold_psi) out["fold_psi"].push_back(detail::to_json(p));
  }
  out["config"] = config_to_json(config);
  return out;
}

/// One-row CSV: header line and value line.
inline std::string report_to_csv(const InferenceReport& report) {
  std::ostringstream head, row;
  head << "n,beta,v_hat,sigma_v";
  row << report.n << ',' << (std::isinf(report.beta) ? std::string("inf") : detail::format_double(report.beta)) << ','
      << detail::format_double(report.value.estimate) << ',' << detail::format_double(report.value.sigma);
  for (const auto& iv : report.value.intervals) {
    const std::string tag = detail::format_double(iv.level);
    head << ",v_lo_" << tag << ",v_hi_" << tag;
    row << ',' << detail::format_double(iv.lo) << ',' << detail::format_double(iv.hi);
  }
  auto coords = [&](const char* name, const std::vector<ScalarInference>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      head << ',' << name << j + 1 << ",sigma_" << name << j + 1;
      row << ',' << detail::format_double(v[j].estimate) << ',' << detail::format_double(v[j].sigma);
    }
  };
  coords("psi", report.psi);
  coords("theta", report.theta);
  return head.str() + "\n" + row.str() + "\n";
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace dtr
