// Simulate one data set, fit with forest nuisances and print V* with its interval.
#include <iostream>

#include "dtr/dtr.hpp"

int main() {
  const auto data = dtr::simulate({.alpha1 = 1.0, .alpha2 = 1.0, .n = 2000, .seed = 11});
  const auto f = dtr::evaluate_features(data, dtr::experiment_feature_maps());

  dtr::FitConfig cfg;
  cfg.beta_schedule = {0.26, 1.0, false};
  const auto fit = dtr::fit_regime(data, f, cfg);
  const auto report = dtr::build_report(data, f, fit, {0.95});

  const auto truth = dtr::oracle_value(1.0, 1.0, 200000, 3);
  const auto& iv = report.value.at(0.95);
  std::cout << "beta      = " << fit.beta << "\n"
            << "psi-hat   = " << fit.params.psi.transpose() << "\n"
            << "theta-hat = " << fit.params.theta.transpose() << "\n"
            << "V-hat     = " << report.value.estimate << "  95% CI [" << iv.lo << ", " << iv.hi << "]\n"
            << "V*        = " << truth.value << " (" << truth.method << ")\n";
}
