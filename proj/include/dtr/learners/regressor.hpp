#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>

#include "dtr/error.hpp"
#include "dtr/model.hpp"

namespace dtr {

/// Regression learner mapping an input matrix to one or more target columns.
/// Vector targets are fit column by column, so a k-column fit equals k
/// independent scalar fits with the same settings.
class Regressor {
 public:
  virtual ~Regressor() = default;

  void fit(const Matrix& inputs, const Matrix& targets) {
    if (inputs.rows() != targets.rows())
      throw LearnerError(name() + ": " + std::to_string(inputs.rows()) + " inputs but " +
                         std::to_string(targets.rows()) + " targets");
    if (inputs.rows() < 1) throw LearnerError(name() + ": empty training set");
    input_dim_ = inputs.cols();
    output_dim_ = targets.cols();
    do_fit(inputs, targets);
    fitted_ = true;
  }

  void fit(const Matrix& inputs, const Vector& target) { fit(inputs, Matrix(target)); }

  Matrix predict(const Matrix& inputs) const {
    if (!fitted_) throw LearnerError(name() + ": predict called before fit");
    if (inputs.cols() != input_dim_)
      throw LearnerError(name() + ": fitted on " + std::to_string(input_dim_) + " inputs, got " +
                         std::to_string(inputs.cols()));
    Matrix out = do_predict(inputs);
    if (out.cols() != output_dim_) throw LearnerError(name() + ": wrong output width");
    return out;
  }

  bool fitted() const { return fitted_; }
  Index output_dim() const { return output_dim_; }
  virtual std::string name() const = 0;

 protected:
  virtual void do_fit(const Matrix& inputs, const Matrix& targets) = 0;
  virtual Matrix do_predict(const Matrix& inputs) const = 0;

 private:
  bool fitted_ = false;
  Index input_dim_ = 0;
  Index output_dim_ = 0;
};

/// Known closed-form conditional mean in place of a learner; fit is a no-op
/// apart from recording shapes.
class ClosedFormRegressor final : public Regressor {
 public:
  using Fn = std::function<Matrix(const Matrix&)>;

  ClosedFormRegressor(std::string label, Fn fn) : label_(std::move(label)), fn_(std::move(fn)) {}

  std::string name() const override { return "oracle:" + label_; }

 protected:
  void do_fit(const Matrix&, const Matrix&) override {}
  Matrix do_predict(const Matrix& inputs) const override { return fn_(inputs); }

 private:
  std::string label_;
  Fn fn_;
};

/// Column means and standard deviations for input standardization.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    const auto n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
      s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
};

}  // namespace dtr
