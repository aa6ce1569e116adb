#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "dtr/dgp.hpp"
#include "dtr/gest.hpp"
#include "dtr/infer.hpp"

namespace dtr {

/// Grid of a Monte Carlo coverage study. Every combination of exponent,
/// (alpha1, alpha2) and n is one scenario cell; each level yields one CoverageCell.
struct CoverageSettings {
  std::vector<double> beta_exponents{0.26};
  double beta_scale = 1.0;
  std::vector<double> alpha1{0.0};
  std::vector<double> alpha2{0.0};
  std::vector<Index> ns{1000};
  std::vector<double> levels{0.95};
  int reps = 100;
  std::string learner = "forest";
  FitMode mode = FitMode::in_sample;
  std::uint64_t seed = 0;
  int jobs = 1;
  long oracle_reps = 1'000'000;  ///< Monte Carlo draws when V* has no closed form
};

struct CoverageCell {
  double beta_exponent = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  Index n = 0;
  double level = 0.95;
  int reps = 0;
  double coverage = 0.0;
  double se = 0.0;  ///< sqrt(p (1 - p) / reps)
  double mean_ci_width = 0.0;
  std::uint64_t seed = 0;
};

/// One replication's value interval at one level.
struct ReplicationRecord {
  double beta_exponent = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  Index n = 0;
  int rep = 0;
  double level = 0.95;
  double v_hat = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double v_star = 0.0;
  bool covered = false;
};

struct CoverageResult {
  std::vector<CoverageCell> cells;
  std::vector<ReplicationRecord> replications;
};

inline double binomial_se(double p, int reps) { return reps > 0 ? std::sqrt(p * (1.0 - p) / reps) : 0.0; }

namespace detail {

struct Scenario {
  double alpha1, alpha2;
  Index n;
};

/// Runs `count` tasks on `jobs` threads; results are written by index so
/// scheduling order never changes the output. The failure of the lowest
/// index is rethrown.
template <class Task>
void run_tasks(std::size_t count, int jobs, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp(jobs, 1, 256));
  if (threads == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Runs every replication of every scenario. Replication r of a scenario
/// simulates stream (seed, r), so all exponents and levels of a scenario share
/// the same data sets.
inline CoverageResult run_coverage(const CoverageSettings& s) {
  if (s.reps < 1) throw Error("coverage needs reps >= 1");
  if (s.beta_exponents.empty() || s.alpha1.empty() || s.alpha2.empty() || s.ns.empty() || s.levels.empty())
    throw Error("coverage grid has an empty axis");
  for (Index n : s.ns)
    if (n < 1) throw Error("coverage needs n >= 1");
  const auto source = nuisance_source(s.learner);
  const auto maps = experiment_feature_maps();

  std::vector<detail::Scenario> scenarios;
  for (double a1 : s.alpha1)
    for (double a2 : s.alpha2)
      for (Index n : s.ns) scenarios.push_back({a1, a2, n});

  std::map<std::pair<double, double>, double> v_star;
  for (double a1 : s.alpha1)
    for (double a2 : s.alpha2) v_star[{a1, a2}] = oracle_value(a1, a2, s.oracle_reps, s.seed).value;

  const std::size_t n_exp = s.beta_exponents.size(), n_lvl = s.levels.size();
  const std::size_t per_task = n_exp * n_lvl;
  const std::size_t tasks = scenarios.size() * static_cast<std::size_t>(s.reps);
  std::vector<ReplicationRecord> records(tasks * per_task);

  detail::run_tasks(tasks, s.jobs, [&](std::size_t task) {
    const auto& sc = scenarios[task / static_cast<std::size_t>(s.reps)];
    const int r = static_cast<int>(task % static_cast<std::size_t>(s.reps));
    const char* stage = "simulate";
    try {
      const auto data = simulate({sc.alpha1, sc.alpha2, sc.n, s.seed, static_cast<std::uint64_t>(r)});
      const auto f = evaluate_features(data, maps);
      const double truth = v_star.at({sc.alpha1, sc.alpha2});
      for (std::size_t e = 0; e < n_exp; ++e) {
        FitConfig cfg;
        cfg.beta_schedule = {s.beta_exponents[e], s.beta_scale, false};
        cfg.nuisances = source;
        cfg.mode = s.mode;
        cfg.seed = derive_seed(s.seed, {static_cast<std::uint64_t>(r)});
        stage = "fit";
        const auto fit = fit_regime(data, f, cfg);
        stage = "inference";
        const auto report = build_report(data, f, fit, s.levels);
        for (std::size_t l = 0; l < n_lvl; ++l) {
          const auto& iv = report.value.intervals[l];
          records[task * per_task + e * n_lvl + l] = {s.beta_exponents[e], sc.alpha1, sc.alpha2, sc.n, r,
                                                      iv.level, report.value.estimate, iv.lo, iv.hi, truth,
                                                      iv.contains(truth)};
        }
      }
    } catch (const std::exception& ex) {
      std::ostringstream msg;
      msg << "replication " << r << " (alpha1=" << sc.alpha1 << ", alpha2=" << sc.alpha2 << ", n=" << sc.n
          << "), stage " << stage << ": " << ex.what();
      throw Error(msg.str());
    }
  });

  CoverageResult out;
  for (std::size_t e = 0; e < n_exp; ++e)
    for (std::size_t c = 0; c < scenarios.size(); ++c)
      for (std::size_t l = 0; l < n_lvl; ++l) {
        CoverageCell cell{s.beta_exponents[e], scenarios[c].alpha1, scenarios[c].alpha2, scenarios[c].n,
                          s.levels[l], s.reps, 0.0, 0.0, 0.0, s.seed};
        int hits = 0;
        double width = 0.0;
        for (int r = 0; r < s.reps; ++r) {
          const auto& rec = records[(c * static_cast<std::size_t>(s.reps) + static_cast<std::size_t>(r)) * per_task +
                                    e * n_lvl + l];
          hits += rec.covered ? 1 : 0;
          width += rec.hi - rec.lo;
        }
        cell.coverage = static_cast<double>(hits) / s.reps;
        cell.se = binomial_se(cell.coverage, s.reps);
        cell.mean_ci_width = width / s.reps;
        out.cells.push_back(cell);
      }
  // Replications sorted by (exponent, scenario, rep, level).
  for (std::size_t e = 0; e < n_exp; ++e)
    for (std::size_t t = 0; t < tasks; ++t)
      for (std::size_t l = 0; l < n_lvl; ++l) out.replications.push_back(records[t * per_task + e * n_lvl + l]);
  return out;
}

inline const char* kCoverageCsvHeader = "beta_exp,alpha1,alpha2,n,level,reps,coverage,se,mean_width,seed";

inline std::string coverage_csv(const std::vector<CoverageCell>& cells) {
  std::ostringstream out;
  out << kCoverageCsvHeader << '\n';
  for (const auto& c : cells)
    out << detail::format_double(c.beta_exponent) << ',' << detail::format_double(c.alpha1) << ','
        << detail::format_double(c.alpha2) << ',' << c.n << ',' << detail::format_double(c.level) << ',' << c.reps
        << ',' << detail::format_double(c.coverage) << ',' << detail::format_double(c.se) << ','
        << detail::format_double(c.mean_ci_width) << ',' << c.seed << '\n';
  return out.str();
}

inline std::string replications_csv(const std::vector<ReplicationRecord>& recs) {
  std::ostringstream out;
  out << "beta_exp,alpha1,alpha2,n,rep,level,v_hat,lo,hi,v_star,covered\n";
  for (const auto& r : recs)
    out << detail::format_double(r.beta_exponent) << ',' << detail::format_double(r.alpha1) << ','
        << detail::format_double(r.alpha2) << ',' << r.n << ',' << r.rep << ',' << detail::format_double(r.level)
        << ',' << detail::format_double(r.v_hat) << ',' << detail::format_double(r.lo) << ','
        << detail::format_double(r.hi) << ',' << detail::format_double(r.v_star) << ',' << (r.covered ? 1 : 0)
        << '\n';
  return out.str();
}

/// Aligned text tables, one per level: rows are beta exponents, columns are
/// (alpha1, alpha2) x n, entries "coverage ± se".
inline std::string coverage_table(const std::vector<CoverageCell>& cells) {
  std::vector<double> levels, exps;
  std::vector<std::tuple<double, double, Index>> cols;
  auto add = [](auto& v, const auto& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& c : cells) {
    add(levels, c.level);
    add(exps, c.beta_exponent);
    add(cols, std::tuple{c.alpha1, c.alpha2, c.n});
  }
  auto fmt2 = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
  };
  std::ostringstream out;
  for (double level : levels) {
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head{"beta"};
    for (const auto& [a1, a2, n] : cols)
      head.push_back("(" + detail::format_double(a1) + "," + detail::format_double(a2) + ") n=" + std::to_string(n));
    grid.push_back(head);
    for (double e : exps) {
      std::vector<std::string> row{"n^" + detail::format_double(e)};
      for (const auto& [a1, a2, n] : cols) {
        std::string entry = "-";
        for (const auto& c : cells)
          if (c.level == level && c.beta_exponent == e && c.alpha1 == a1 && c.alpha2 == a2 && c.n == n)
            entry = fmt2(c.coverage) + " ± " + fmt2(c.se);
        row.push_back(entry);
      }
      grid.push_back(row);
    }
    std::vector<std::size_t> width(head.size(), 0);
    auto display_len = [](const std::string& s) {
      std::size_t len = 0;
      for (unsigned char ch : s) len += (ch & 0xC0) != 0x80;  // count UTF-8 code points
      return len;
    };
    for (const auto& row : grid)
      for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], display_len(row[j]));
    out << "Coverage of " << fmt2(level * 100.0).substr(0, fmt2(level * 100.0).find('.')) << "% intervals for V*\n";
    for (const auto& row : grid) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        out << (j ? "  " : "") << row[j];
        if (j + 1 < row.size()) out << std::string(width[j] - display_len(row[j]), ' ');
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dtr
