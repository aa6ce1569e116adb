#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dtr/learners/regressor.hpp"
#include "dtr/rng.hpp"

namespace dtr {

/// Bagged regression trees (CART, squared-error splits) with per-node feature
/// subsampling. Inputs are quantile-binned once per fit (at most `max_bins`
/// bins per feature); below that many distinct values the splits are exact.
class RandomForestRegressor final : public Regressor {
 public:
  struct Options {
    int trees = 100;
    int max_depth = 8;
    int min_leaf = 5;
    int mtry = 0;  ///< 0 selects max(1, floor(sqrt(d)))
    int max_bins = 255;
    bool bootstrap = true;
    std::uint64_t seed = 0;
  };

  RandomForestRegressor() : RandomForestRegressor(Options{}) {}
  explicit RandomForestRegressor(Options opt) : opt_(opt) {
    if (opt_.trees < 1) throw LearnerError("forest: trees must be >= 1");
    if (opt_.max_depth < 0) throw LearnerError("forest: depth must be >= 0");
    if (opt_.min_leaf < 1) throw LearnerError("forest: leaf must be >= 1");
    if (opt_.mtry < 0) throw LearnerError("forest: mtry must be >= 0");
    if (opt_.max_bins < 2 || opt_.max_bins > 65535) throw LearnerError("forest: bins must be in [2, 65535]");
  }

  std::string name() const override { return "forest"; }
  const Options& options() const { return opt_; }

 protected:
  void do_fit(const Matrix& inputs, const Matrix& targets) override {
    const Index n = inputs.rows(), d = inputs.cols();
    build_bins(inputs);
    mtry_ = opt_.mtry > 0 ? std::min<int>(opt_.mtry, static_cast<int>(d))
                          : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
    forests_.assign(static_cast<std::size_t>(targets.cols()), {});
    for (Index c = 0; c < targets.cols(); ++c) {
      auto& trees = forests_[static_cast<std::size_t>(c)];
      trees.resize(static_cast<std::size_t>(opt_.trees));
      const Vector y = targets.col(c);
      for (int t = 0; t < opt_.trees; ++t) {
        // The seed does not depend on the column, so vector fits match scalar fits.
        Engine rng = make_engine(opt_.seed, static_cast<std::uint64_t>(t));
        std::vector<Index> rows(static_cast<std::size_t>(n));
        if (opt_.bootstrap) {
          std::uniform_int_distribution<Index> pick(0, n - 1);
          for (auto& r : rows) r = pick(rng);
        } else {
          std::iota(rows.begin(), rows.end(), Index{0});
        }
        grow_tree(trees[static_cast<std::size_t>(t)], rows, y, rng);
      }
    }
  }

  Matrix do_predict(const Matrix& inputs) const override {
    Matrix out(inputs.rows(), static_cast<Index>(forests_.size()));
    for (std::size_t c = 0; c < forests_.size(); ++c) {
      for (Index i = 0; i < inputs.rows(); ++i) {
        double acc = 0.0;
        for (const auto& tree : forests_[c]) {
          std::size_t node = 0;
          while (tree[node].feature >= 0)
            node = inputs(i, tree[node].feature) <= tree[node].threshold ? tree[node].left : tree[node].right;
          acc += tree[node].value;
        }
        out(i, static_cast<Index>(c)) = acc / static_cast<double>(forests_[c].size());
      }
    }
    return out;
  }

 private:
  struct Node {
    int feature = -1;  ///< -1 marks a leaf
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  struct Split {
    int feature = -1;
    int bin = -1;
    double gain = 0.0;
  };

  void build_bins(const Matrix& x) {
    const Index n = x.rows(), d = x.cols();
    cuts_.assign(static_cast<std::size_t>(d), {});
    binned_.assign(static_cast<std::size_t>(n * d), 0);
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = x(i, j);
      std::sort(sorted.begin(), sorted.end());
      auto& cuts = cuts_[static_cast<std::size_t>(j)];
      std::vector<double> uniq(sorted.begin(), std::unique(sorted.begin(), sorted.end()));
      if (static_cast<int>(uniq.size()) <= opt_.max_bins) {
        for (std::size_t u = 0; u + 1 < uniq.size(); ++u) cuts.push_back(0.5 * (uniq[u] + uniq[u + 1]));
      } else {
        for (int q = 1; q < opt_.max_bins; ++q) {
          const auto pos = static_cast<std::size_t>(static_cast<double>(q) * static_cast<double>(n) / opt_.max_bins);
          const double v = sorted[std::min(pos, sorted.size() - 1)];
          if (cuts.empty() || v > cuts.back()) cuts.push_back(v);
        }
        if (!cuts.empty() && cuts.back() >= sorted.back()) cuts.pop_back();
      }
      for (Index i = 0; i < n; ++i) {
        const auto b = std::lower_bound(cuts.begin(), cuts.end(), x(i, j)) - cuts.begin();
        binned_[static_cast<std::size_t>(j * n + i)] = static_cast<std::uint16_t>(b);
      }
    }
    rows_ = n;
  }

  std::uint16_t bin_of(Index row, int feature) const {
    return binned_[static_cast<std::size_t>(feature * rows_ + row)];
  }

  void grow_tree(Tree& tree, std::vector<Index>& rows, const Vector& y, Engine& rng) {
    tree.clear();
    tree.reserve(64);
    std::vector<int> features(cuts_.size());
    grow_node(tree, rows, 0, rows.size(), 0, y, rng, features);
  }

  std::size_t grow_node(Tree& tree, std::vector<Index>& rows, std::size_t begin, std::size_t end, int depth,
                        const Vector& y, Engine& rng, std::vector<int>& features) {
    const std::size_t id = tree.size();
    tree.emplace_back();
    const auto count = static_cast<double>(end - begin);
    double sum = 0.0, lo = y(rows[begin]), hi = lo;
    for (std::size_t m = begin; m < end; ++m) {
      const double v = y(rows[m]);
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    tree[id].value = sum / count;
    if (depth >= opt_.max_depth || end - begin < 2 * static_cast<std::size_t>(opt_.min_leaf) || lo == hi) return id;

    const Split split = best_split(rows, begin, end, sum, y, rng, features);
    if (split.feature < 0) return id;

    const auto mid_it = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                       rows.begin() + static_cast<std::ptrdiff_t>(end),
                                       [&](Index r) { return bin_of(r, split.feature) <= split.bin; });
    const auto mid = static_cast<std::size_t>(mid_it - rows.begin());
    const double threshold = cuts_[static_cast<std::size_t>(split.feature)][static_cast<std::size_t>(split.bin)];
    const std::size_t left = grow_node(tree, rows, begin, mid, depth + 1, y, rng, features);
    const std::size_t right = grow_node(tree, rows, mid, end, depth + 1, y, rng, features);
    tree[id].feature = split.feature;
    tree[id].threshold = threshold;
    tree[id].left = left;
    tree[id].right = right;
    return id;
  }

  Split best_split(const std::vector<Index>& rows, std::size_t begin, std::size_t end, double total, const Vector& y,
                   Engine& rng, std::vector<int>& features) const {
    const int d = static_cast<int>(cuts_.size());
    std::iota(features.begin(), features.end(), 0);
    for (int m = 0; m < mtry_; ++m) {
      std::uniform_int_distribution<int> pick(m, d - 1);
      std::swap(features[static_cast<std::size_t>(m)], features[static_cast<std::size_t>(pick(rng))]);
    }
    const auto count = static_cast<double>(end - begin);
    const double parent = total * total / count;
    Split best;
    std::vector<double> bin_sum;
    std::vector<std::size_t> bin_count;
    for (int m = 0; m < mtry_; ++m) {
      const int f = features[static_cast<std::size_t>(m)];
      const std::size_t bins = cuts_[static_cast<std::size_t>(f)].size() + 1;
      if (bins < 2) continue;
      bin_sum.assign(bins, 0.0);
      bin_count.assign(bins, 0);
      for (std::size_t r = begin; r < end; ++r) {
        const auto b = bin_of(rows[r], f);
        bin_sum[b] += y(rows[r]);
        ++bin_count[b];
      }
      double left_sum = 0.0;
      std::size_t left_count = 0;
      const auto min_leaf = static_cast<std::size_t>(opt_.min_leaf);
      for (std::size_t b = 0; b + 1 < bins; ++b) {
        left_sum += bin_sum[b];
        left_count += bin_count[b];
        if (bin_count[b] == 0) continue;
        const std::size_t right_count = (end - begin) - left_count;
        if (left_count < min_leaf) continue;
        if (right_count < min_leaf) break;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(left_count) +
                            right_sum * right_sum / static_cast<double>(right_count) - parent;
        if (gain > best.gain + 1e-12 * std::abs(parent) + 1e-300) {
          best.gain = gain;
          best.feature = f;
          best.bin = static_cast<int>(b);
        }
      }
    }
    return best;
  }

  Options opt_;
  int mtry_ = 1;
  Index rows_ = 0;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::uint16_t> binned_;
  std::vector<std::vector<Tree>> forests_;
};

}  // namespace dtr
