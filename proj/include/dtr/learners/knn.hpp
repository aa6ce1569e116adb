#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dtr/learners/regressor.hpp"

namespace dtr {

/// Uniform-weight k-nearest-neighbour regression in standardized input space.
/// Distance ties at the k-th neighbour are broken by training-row order.
class KnnRegressor final : public Regressor {
 public:
  struct Options {
    int k = 0;  ///< 0 selects round(n^{4/5})
  };

  KnnRegressor() : KnnRegressor(Options{}) {}
  explicit KnnRegressor(Options opt) : opt_(opt) {
    if (opt_.k < 0) throw LearnerError("knn: k must be >= 0");
  }

  std::string name() const override { return "knn"; }

  static int default_k(Index n) {
    return std::max(1, static_cast<int>(std::lround(std::pow(static_cast<double>(n), 0.8))));
  }

  int neighbours() const { return k_; }

 protected:
  void do_fit(const Matrix& inputs, const Matrix& targets) override {
    standardizer_ = Standardizer::fit(inputs);
    train_ = standardizer_.apply(inputs);
    targets_ = targets;
    k_ = opt_.k > 0 ? opt_.k : default_k(inputs.rows());
    k_ = std::min<int>(k_, static_cast<int>(inputs.rows()));
  }

  Matrix do_predict(const Matrix& inputs) const override {
    const Matrix q = standardizer_.apply(inputs);
    const Index n = train_.rows();
    Matrix out(q.rows(), targets_.cols());
    std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < q.rows(); ++i) {
      for (Index j = 0; j < n; ++j) dist[static_cast<std::size_t>(j)] = {(train_.row(j) - q.row(i)).squaredNorm(), j};
      std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
      std::sort(dist.begin(), dist.begin() + k_, [](const auto& a, const auto& b) { return a.second < b.second; });
      for (Index c = 0; c < targets_.cols(); ++c) {
        double acc = 0.0;
        for (int m = 0; m < k_; ++m) acc += targets_(dist[static_cast<std::size_t>(m)].second, c);
        out(i, c) = acc / k_;
      }
    }
    return out;
  }

 private:
  Options opt_;
  Standardizer standardizer_;
  Matrix train_;
  Matrix targets_;
  int k_ = 1;
};

}  // namespace dtr
