#pragma once

#include <vector>

#include "dtr/learners/regressor.hpp"

namespace dtr {

/// Ridge regression on a polynomial expansion of standardized inputs, with an
/// unpenalized intercept. Objective: ||y - b - Z w||^2 + lambda ||w||^2.
class RidgeRegressor final : public Regressor {
 public:
  struct Options {
    int degree = 2;
    double lambda = 1e-3;
  };

  RidgeRegressor() : RidgeRegressor(Options{}) {}
  explicit RidgeRegressor(Options opt) : opt_(opt) {
    if (opt_.degree < 1) throw LearnerError("ridge: degree must be >= 1");
    if (opt_.lambda < 0.0) throw LearnerError("ridge: lambda must be >= 0");
  }

  std::string name() const override { return "ridge"; }

  /// All monomials of standardized inputs with total degree 1..degree.
  Matrix expand(const Matrix& standardized) const {
    const Index n = standardized.rows();
    Matrix out(n, static_cast<Index>(terms_.size()));
    for (std::size_t c = 0; c < terms_.size(); ++c) {
      Vector col = Vector::Ones(n);
      for (int j : terms_[c]) col.array() *= standardized.col(j).array();
      out.col(static_cast<Index>(c)) = col;
    }
    return out;
  }

 protected:
  void do_fit(const Matrix& inputs, const Matrix& targets) override {
    standardizer_ = Standardizer::fit(inputs);
    build_terms(static_cast<int>(inputs.cols()));
    const Matrix z = expand(standardizer_.apply(inputs));
    z_mean_ = z.colwise().mean().transpose();
    const Matrix zc = z.rowwise() - z_mean_.transpose();
    const Index p = zc.cols();

    // Augmented least squares [Zc; sqrt(lambda) I] w = [yc; 0].
    Matrix a(zc.rows() + (opt_.lambda > 0.0 ? p : 0), p);
    a.topRows(zc.rows()) = zc;
    if (opt_.lambda > 0.0) a.bottomRows(p) = std::sqrt(opt_.lambda) * Matrix::Identity(p, p);
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    if (qr.rank() < p) throw LearnerError("ridge: singular design (rank " + std::to_string(qr.rank()) + " < " +
                                          std::to_string(p) + ")");

    weights_.resize(p, targets.cols());
    intercept_.resize(targets.cols());
    for (Index c = 0; c < targets.cols(); ++c) {
      const double y_mean = targets.col(c).mean();
      Vector rhs = Vector::Zero(a.rows());
      rhs.head(zc.rows()) = targets.col(c).array() - y_mean;
      weights_.col(c) = qr.solve(rhs);
      intercept_(c) = y_mean - z_mean_.dot(weights_.col(c));
    }
  }

  Matrix do_predict(const Matrix& inputs) const override {
    const Matrix z = expand(standardizer_.apply(inputs));
    Matrix out = z * weights_;
    out.rowwise() += intercept_.transpose();
    return out;
  }

 private:
  void build_terms(int dim) {
    terms_.clear();
    std::vector<int> current;
    // Non-decreasing index tuples enumerate monomials without repetition.
    auto recurse = [&](auto&& self, int start, int remaining) -> void {
      if (!current.empty()) terms_.push_back(current);
      if (remaining == 0) return;
      for (int j = start; j < dim; ++j) {
        current.push_back(j);
        self(self, j, remaining - 1);
        current.pop_back();
      }
    };
    recurse(recurse, 0, opt_.degree);
  }

  Options opt_;
  Standardizer standardizer_;
  std::vector<std::vector<int>> terms_;
  Vector z_mean_;
  Matrix weights_;
  Vector intercept_;
};

}  // namespace dtr
