#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dtr/error.hpp"

namespace dtr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Observational two-period trajectories Z = (S, T1, X, T2, Y), one row per unit.
/// Treatments are dense labels 0..K-1 with 0 the baseline. Validated on construction.
class TrajectoryTable {
 public:
  TrajectoryTable(Matrix s, std::vector<int> t1, Matrix x, std::vector<int> t2, Vector y, int k)
      : s_(std::move(s)), t1_(std::move(t1)), x_(std::move(x)), t2_(std::move(t2)), y_(std::move(y)), k_(k) {
    validate();
  }

  Index rows() const { return y_.size(); }
  int treatments() const { return k_; }
  Index first_state_dim() const { return s_.cols(); }
  Index second_state_dim() const { return x_.cols(); }

  const Matrix& s() const { return s_; }
  const std::vector<int>& t1() const { return t1_; }
  const Matrix& x() const { return x_; }
  const std::vector<int>& t2() const { return t2_; }
  const Vector& y() const { return y_; }

  /// Rows `idx` (in that order) as a new table.
  TrajectoryTable select(std::span<const Index> idx) const {
    Matrix s(static_cast<Index>(idx.size()), s_.cols());
    Matrix x(static_cast<Index>(idx.size()), x_.cols());
    std::vector<int> t1(idx.size()), t2(idx.size());
    Vector y(static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Index i = idx[j];
      s.row(static_cast<Index>(j)) = s_.row(i);
      x.row(static_cast<Index>(j)) = x_.row(i);
      t1[j] = t1_[static_cast<std::size_t>(i)];
      t2[j] = t2_[static_cast<std::size_t>(i)];
      y(static_cast<Index>(j)) = y_(i);
    }
    return {std::move(s), std::move(t1), std::move(x), std::move(t2), std::move(y), k_};
  }

  /// Same trajectories with a replaced outcome column.
  TrajectoryTable with_outcome(Vector y) const { return {s_, t1_, x_, t2_, std::move(y), k_}; }

  friend bool operator==(const TrajectoryTable& a, const TrajectoryTable& b) {
    return a.k_ == b.k_ && a.t1_ == b.t1_ && a.t2_ == b.t2_ && a.s_.rows() == b.s_.rows() &&
           a.s_.cols() == b.s_.cols() && a.x_.cols() == b.x_.cols() && a.s_ == b.s_ && a.x_ == b.x_ &&
           a.y_ == b.y_;
  }

 private:
  void validate() const {
    const auto n = static_cast<std::size_t>(y_.size());
    if (n == 0) throw DataError("no rows");
    if (k_ < 2) throw DataError("need at least two treatments, got K=" + std::to_string(k_));
    if (static_cast<std::size_t>(s_.rows()) != n || static_cast<std::size_t>(x_.rows()) != n || t1_.size() != n ||
        t2_.size() != n) {
      throw DataError("row count mismatch between s, t1, x, t2, y");
    }
    auto check_labels = [&](const std::vector<int>& t, const char* col) {
      for (std::size_t i = 0; i < n; ++i) {
        if (t[i] < 0 || t[i] >= k_) {
          throw DataError("row " + std::to_string(i + 1) + ", column '" + col + "': label " + std::to_string(t[i]) +
                          " out of range for K=" + std::to_string(k_));
        }
      }
    };
    check_labels(t1_, "t1");
    check_labels(t2_, "t2");
    auto check_finite = [&](const Matrix& m, const char* prefix) {
      for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
          if (!std::isfinite(m(i, j)))
            throw DataError("row " + std::to_string(i + 1) + ", column '" + prefix + std::to_string(j + 1) +
                            "': non-finite value");
    };
    check_finite(s_, "s_");
    check_finite(x_, "x_");
    for (Index i = 0; i < y_.size(); ++i)
      if (!std::isfinite(y_(i))) throw DataError("row " + std::to_string(i + 1) + ", column 'y': non-finite value");
  }

  Matrix s_;
  std::vector<int> t1_;
  Matrix x_;
  std::vector<int> t2_;
  Vector y_;
  int k_;
};

// ---------------------------------------------------------------------------
// CSV trajectory format: header `s_1..s_dS,t1,x_1..x_dX,t2,y`.

/// Column names used when reading a trajectory CSV. Empty state-column lists
/// are inferred from the header (`s_1, s_2, ...` and `x_1, x_2, ...` in order).
/// `treatments == 0` infers K as max label + 1 (at least 2).
struct CsvSchema {
  std::vector<std::string> s_columns;
  std::vector<std::string> x_columns;
  std::string t1 = "t1";
  std::string t2 = "t2";
  std::string y = "y";
  int treatments = 0;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::vector<std::string> numbered_columns(const std::string& prefix, Index count) {
  std::vector<std::string> cols;
  for (Index j = 0; j < count; ++j) cols.push_back(prefix + std::to_string(j + 1));
  return cols;
}

}  // namespace detail

/// Reads and validates a trajectory CSV. Errors name the offending row (1-based,
/// data rows only) and column.
inline TrajectoryTable load_trajectories(const std::string& path, CsvSchema schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("no rows");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header_views = detail::split_csv_line(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());
  std::map<std::string, std::size_t> position;
  for (std::size_t j = 0; j < header.size(); ++j) position.emplace(header[j], j);

  auto infer = [&](const std::string& prefix) {
    std::vector<std::string> cols;
    for (int j = 1;; ++j) {
      auto name = prefix + std::to_string(j);
      if (!position.count(name)) break;
      cols.push_back(name);
    }
    return cols;
  };
  if (schema.s_columns.empty()) schema.s_columns = infer("s_");
  if (schema.x_columns.empty()) schema.x_columns = infer("x_");
  if (schema.s_columns.empty()) throw DataError("missing column 's_1'");
  if (schema.x_columns.empty()) throw DataError("missing column 'x_1'");

  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw DataError("missing column '" + name + "'");
    return it->second;
  };
  std::vector<std::size_t> s_pos, x_pos;
  for (const auto& c : schema.s_columns) s_pos.push_back(locate(c));
  for (const auto& c : schema.x_columns) x_pos.push_back(locate(c));
  const auto t1_pos = locate(schema.t1), t2_pos = locate(schema.t2), y_pos = locate(schema.y);

  std::vector<double> s_vals, x_vals, y_vals;
  std::vector<int> t1, t2;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    auto number = [&](std::size_t col) {
      double v = 0.0;
      const auto f = fields[col];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty()) {
        throw DataError("row " + std::to_string(row) + ", column '" + header[col] + "': cannot parse '" +
                        std::string(f) + "'");
      }
      if (!std::isfinite(v))
        throw DataError("row " + std::to_string(row) + ", column '" + header[col] + "': non-finite value");
      return v;
    };
    auto label = [&](std::size_t col) {
      const double v = number(col);
      if (v != std::floor(v) || v < 0 || v > 1e6)
        throw DataError("row " + std::to_string(row) + ", column '" + header[col] + "': invalid treatment label '" +
                        std::string(fields[col]) + "'");
      const int t = static_cast<int>(v);
      if (schema.treatments > 0 && t >= schema.treatments)
        throw DataError("row " + std::to_string(row) + ", column '" + header[col] + "': label " + std::to_string(t) +
                        " out of range for K=" + std::to_string(schema.treatments));
      return t;
    };
    for (auto p : s_pos) s_vals.push_back(number(p));
    t1.push_back(label(t1_pos));
    for (auto p : x_pos) x_vals.push_back(number(p));
    t2.push_back(label(t2_pos));
    y_vals.push_back(number(y_pos));
  }
  if (row == 0) throw DataError("no rows");

  const auto n = static_cast<Index>(row);
  const auto ds = static_cast<Index>(s_pos.size()), dx = static_cast<Index>(x_pos.size());
  Matrix s = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s_vals.data(), n, ds);
  Matrix x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x_vals.data(), n, dx);
  Vector y = Eigen::Map<Vector>(y_vals.data(), n);
  int k = schema.treatments;
  if (k == 0) {
    int top = 0;
    for (std::size_t i = 0; i < t1.size(); ++i) top = std::max({top, t1[i], t2[i]});
    k = std::max(2, top + 1);
  }
  return {std::move(s), std::move(t1), std::move(x), std::move(t2), std::move(y), k};
}

/// Writes the table in the CSV trajectory format. Values use the shortest
/// round-trip decimal form, so load_trajectories(save_trajectories(t)) == t.
inline void save_trajectories(const TrajectoryTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  std::string line;
  for (const auto& c : detail::numbered_columns("s_", table.first_state_dim())) line += c + ",";
  line += "t1,";
  for (const auto& c : detail::numbered_columns("x_", table.second_state_dim())) line += c + ",";
  line += "t2,y\n";
  out << line;
  for (Index i = 0; i < table.rows(); ++i) {
    line.clear();
    for (Index j = 0; j < table.first_state_dim(); ++j) line += detail::format_double(table.s()(i, j)) + ",";
    line += std::to_string(table.t1()[static_cast<std::size_t>(i)]) + ",";
    for (Index j = 0; j < table.second_state_dim(); ++j) line += detail::format_double(table.x()(i, j)) + ",";
    line += std::to_string(table.t2()[static_cast<std::size_t>(i)]) + ",";
    line += detail::format_double(table.y()(i)) + "\n";
    out << line;
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Blip feature maps.

using FeatureFn = std::function<Vector(int treatment, const Vector& state)>;

/// Feature maps of the linear blip model: gamma2(t, x) = psi' phi(t, x) and
/// gamma1(t, s) = theta' mu(t, s). Baseline convention phi(0, .) = mu(0, .) = 0.
class FeatureMapPair {
 public:
  FeatureMapPair(FeatureFn phi, Index phi_dim, FeatureFn mu, Index mu_dim, int treatments)
      : phi_(std::move(phi)), mu_(std::move(mu)), phi_dim_(phi_dim), mu_dim_(mu_dim), k_(treatments) {
    if (!phi_ || !mu_) throw DimensionError("feature maps must be callable");
    if (phi_dim_ < 1 || mu_dim_ < 1) throw DimensionError("feature dimensions must be positive");
    if (k_ < 2) throw DimensionError("feature maps need K >= 2");
  }

  Index phi_dim() const { return phi_dim_; }
  Index mu_dim() const { return mu_dim_; }
  int treatments() const { return k_; }

  Vector phi(int t, const Vector& x) const { return checked(phi_, t, x, phi_dim_, "phi"); }
  Vector mu(int t, const Vector& s) const { return checked(mu_, t, s, mu_dim_, "mu"); }

  /// Throws unless K matches the table and the baseline convention holds on every row.
  void check_against(const TrajectoryTable& data) const {
    if (data.treatments() != k_)
      throw DimensionError("feature maps built for K=" + std::to_string(k_) + " but data has K=" +
                           std::to_string(data.treatments()));
    for (Index i = 0; i < data.rows(); ++i) {
      if (!phi(0, data.x().row(i).transpose()).isZero(0.0))
        throw DimensionError("phi(0, x) must be the zero vector (row " + std::to_string(i + 1) + ")");
      if (!mu(0, data.s().row(i).transpose()).isZero(0.0))
        throw DimensionError("mu(0, s) must be the zero vector (row " + std::to_string(i + 1) + ")");
    }
  }

 private:
  static Vector checked(const FeatureFn& f, int t, const Vector& v, Index dim, const char* name) {
    Vector out = f(t, v);
    if (out.size() != dim)
      throw DimensionError(std::string(name) + " returned length " + std::to_string(out.size()) + ", expected " +
                           std::to_string(dim));
    return out;
  }

  FeatureFn phi_;
  FeatureFn mu_;
  Index phi_dim_;
  Index mu_dim_;
  int k_;
};

/// The binary-treatment maps of the simulation study:
/// phi(t, x) = (t, x1 t), mu(t, s) = (t, s1 t).
inline FeatureMapPair experiment_feature_maps() {
  auto phi = [](int t, const Vector& x) {
    Vector out(2);
    out << t, x(0) * t;
    return out;
  };
  auto mu = [](int t, const Vector& s) {
    Vector out(2);
    out << t, s(0) * t;
    return out;
  };
  return {phi, 2, mu, 2, 2};
}

/// Feature maps evaluated on every row and treatment of a table.
struct EvaluatedFeatures {
  std::vector<Matrix> phi;  ///< phi[t] is n x d_phi, row i = phi(t, X_i)
  std::vector<Matrix> mu;   ///< mu[t] is n x d_mu
  Matrix phi_obs;           ///< phi(T2_i, X_i)
  Matrix mu_obs;            ///< mu(T1_i, S_i)

  Index rows() const { return phi_obs.rows(); }
  Index phi_dim() const { return phi_obs.cols(); }
  Index mu_dim() const { return mu_obs.cols(); }
  int treatments() const { return static_cast<int>(phi.size()); }

  /// The same rows as TrajectoryTable::select(idx).
  EvaluatedFeatures select(std::span<const Index> idx) const {
    EvaluatedFeatures out;
    auto take = [&](const Matrix& m) {
      Matrix r(static_cast<Index>(idx.size()), m.cols());
      for (std::size_t j = 0; j < idx.size(); ++j) r.row(static_cast<Index>(j)) = m.row(idx[j]);
      return r;
    };
    for (const auto& m : phi) out.phi.push_back(take(m));
    for (const auto& m : mu) out.mu.push_back(take(m));
    out.phi_obs = take(phi_obs);
    out.mu_obs = take(mu_obs);
    return out;
  }

  /// K x d_phi matrix whose row t is phi(t, X_i).
  Matrix phi_row(Index i) const { return stack(phi, i); }
  Matrix mu_row(Index i) const { return stack(mu, i); }

  /// n x K score matrix with entries coef' f[t](i).
  static Matrix scores(const std::vector<Matrix>& f, const Vector& coef) {
    Matrix out(f.front().rows(), static_cast<Index>(f.size()));
    for (std::size_t t = 0; t < f.size(); ++t) {
      if (f[t].cols() != coef.size()) throw DimensionError("coefficient length does not match feature dimension");
      out.col(static_cast<Index>(t)) = f[t] * coef;
    }
    return out;
  }

 private:
  static Matrix stack(const std::vector<Matrix>& f, Index i) {
    Matrix out(static_cast<Index>(f.size()), f.front().cols());
    for (std::size_t t = 0; t < f.size(); ++t) out.row(static_cast<Index>(t)) = f[t].row(i);
    return out;
  }
};

inline EvaluatedFeatures evaluate_features(const TrajectoryTable& data, const FeatureMapPair& maps) {
  maps.check_against(data);
  const Index n = data.rows();
  const int k = data.treatments();
  EvaluatedFeatures out;
  out.phi.assign(static_cast<std::size_t>(k), Matrix(n, maps.phi_dim()));
  out.mu.assign(static_cast<std::size_t>(k), Matrix(n, maps.mu_dim()));
  out.phi_obs.resize(n, maps.phi_dim());
  out.mu_obs.resize(n, maps.mu_dim());
  for (Index i = 0; i < n; ++i) {
    const Vector x = data.x().row(i).transpose();
    const Vector s = data.s().row(i).transpose();
    for (int t = 0; t < k; ++t) {
      out.phi[static_cast<std::size_t>(t)].row(i) = maps.phi(t, x).transpose();
      out.mu[static_cast<std::size_t>(t)].row(i) = maps.mu(t, s).transpose();
    }
    out.phi_obs.row(i) = out.phi[static_cast<std::size_t>(data.t2()[static_cast<std::size_t>(i)])].row(i);
    out.mu_obs.row(i) = out.mu[static_cast<std::size_t>(data.t1()[static_cast<std::size_t>(i)])].row(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitted regime.

struct StructuralParams {
  Vector psi;    ///< second-period blip coefficients
  Vector theta;  ///< first-period blip coefficients
};

enum class FitMode { in_sample, nested_crossfit };

inline std::string to_string(FitMode m) { return m == FitMode::in_sample ? "in_sample" : "nested_crossfit"; }

inline FitMode parse_fit_mode(std::string_view s) {
  if (s == "in_sample") return FitMode::in_sample;
  if (s == "nested_crossfit" || s == "crossfit") return FitMode::nested_crossfit;
  throw Error("unknown fitting mode '" + std::string(s) + "' (expected in_sample or nested_crossfit)");
}

/// Per-row residuals kept for inference. In cross-fit mode every entry is
/// out-of-fold for its row.
struct NuisanceResiduals {
  Vector y_check;     ///< Y - h(X)
  Matrix phi_check;   ///< phi(T2, X) - r(X)
  Vector y_hat;       ///< Y - q(S)
  Matrix m_hat;       ///< mu(T1, S) - p1(S)
  Vector phi_hat;     ///< psi' phi(T2, X) - softmax_t psi' phi(t, X) - p2(S)
  Vector phi_hat_inf; ///< same with the hard maximum
  Vector p2;          ///< p2(S) predictions
  Matrix phi_inf;     ///< tie-averaged argmax feature under the row's psi
  Matrix phi_soft;    ///< Boltzmann-weighted feature under the row's psi
};

struct FitDiagnostics {
  double psi_moment_norm = 0.0;    ///< l-inf norm of the second-period empirical moment at psi-hat
  double theta_moment_norm = 0.0;  ///< l-inf norm of the first-period empirical moment at theta-hat
  double psi_condition = 0.0;
  double theta_condition = 0.0;
  bool psi_ridged = false;
  bool theta_ridged = false;
  std::map<std::string, double> nuisance_rmse;  ///< residual RMS per nuisance regression
};

struct RegimeFit {
  StructuralParams params;
  double beta = std::numeric_limits<double>::infinity();
  FitMode mode = FitMode::in_sample;
  NuisanceResiduals residuals;
  FitDiagnostics diagnostics;
  Matrix psi_gram;              ///< (1/n) sum phi_check phi_check' as solved
  Matrix theta_gram;            ///< (1/n) sum m_hat m_hat' as solved
  std::vector<Vector> fold_psi; ///< per-fold psi^(l) in cross-fit mode
  std::vector<int> fold;        ///< fold of each row (-1 in in-sample mode)
};

}  // namespace dtr
