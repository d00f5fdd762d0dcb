#include <algorithm>
#include <cmath>
#include <numeric>

#include "avm/regress.hpp"

namespace avm::regress {

double RegressionTree::predict(std::span<const double> x) const {
  int i = 0;
  for (;;) {
    const TreeNode& n = nodes[static_cast<std::size_t>(i)];
    if (n.feature < 0) return n.value;
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0;
  double sse = 0;
  std::size_t left_count = 0;  // rows in the sorted order that go left
};

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& x, const Vector& y, const ForestOptions& opts, Rng& rng)
      : x_(x), y_(y), opts_(opts), rng_(rng), d_(static_cast<std::size_t>(x.cols())) {}

  RegressionTree grow(std::vector<std::size_t> rows) {
    RegressionTree tree;
    struct Work {
      int node;
      std::vector<std::size_t> rows;
    };
    std::vector<Work> stack;
    tree.nodes.push_back({});
    stack.push_back({0, std::move(rows)});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      double mean = 0;
      for (auto r : w.rows) mean += y_(static_cast<Eigen::Index>(r));
      mean /= static_cast<double>(w.rows.size());
      double sse = 0;
      for (auto r : w.rows) {
        const double t = y_(static_cast<Eigen::Index>(r)) - mean;
        sse += t * t;
      }
      TreeNode& node = tree.nodes[static_cast<std::size_t>(w.node)];
      node.value = mean;
      node.n_samples = static_cast<int>(w.rows.size());

      const auto min_leaf = static_cast<std::size_t>(opts_.min_samples_leaf);
      if (sse <= 0 || w.rows.size() < 2 * min_leaf) continue;
      Split best = find_split(w.rows, mean, sse);
      if (best.feature < 0) continue;

      std::vector<std::size_t> left, right;
      const auto f = static_cast<Eigen::Index>(best.feature);
      for (auto r : w.rows) (x_(static_cast<Eigen::Index>(r), f) <= best.threshold ? left : right).push_back(r);

      const int li = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      TreeNode& parent = tree.nodes[static_cast<std::size_t>(w.node)];
      parent.feature = best.feature;
      parent.threshold = best.threshold;
      parent.left = li;
      parent.right = li + 1;
      stack.push_back({li + 1, std::move(right)});
      stack.push_back({li, std::move(left)});
    }
    return tree;
  }

 private:
  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> f(d_);
    std::iota(f.begin(), f.end(), 0);
    std::size_t m = d_;
    if (opts_.max_features == MaxFeatures::Sqrt) m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d_))));
    if (opts_.max_features == MaxFeatures::Third) m = std::max<std::size_t>(1, d_ / 3);
    if (m < d_) {
      for (std::size_t i = 0; i < m; ++i) std::swap(f[i], f[i + rng_.index(d_ - i)]);
      f.resize(m);
      std::sort(f.begin(), f.end());
    }
    return f;
  }

  Split find_split(const std::vector<std::size_t>& rows, double mean, double parent_sse) {
    const std::size_t m = rows.size();
    const auto min_leaf = static_cast<std::size_t>(opts_.min_samples_leaf);
    Split best;
    best.sse = parent_sse;
    std::vector<std::size_t> order(rows);
    std::vector<double> v(m), t(m);
    for (std::size_t f : candidate_features()) {
      const auto fi = static_cast<Eigen::Index>(f);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double xa = x_(static_cast<Eigen::Index>(a), fi), xb = x_(static_cast<Eigen::Index>(b), fi);
        return xa < xb || (xa == xb && a < b);
      });
      double total = 0, total_sq = 0;
      for (std::size_t i = 0; i < m; ++i) {
        v[i] = x_(static_cast<Eigen::Index>(order[i]), fi);
        t[i] = y_(static_cast<Eigen::Index>(order[i])) - mean;  // centered for precision
        total += t[i];
        total_sq += t[i] * t[i];
      }
      double ls = 0, lsq = 0;
      for (std::size_t p = 1; p < m; ++p) {
        ls += t[p - 1];
        lsq += t[p - 1] * t[p - 1];
        if (!(v[p - 1] < v[p]) || p < min_leaf || m - p < min_leaf) continue;
        const double nl = static_cast<double>(p), nr = static_cast<double>(m - p);
        const double rs = total - ls, rsq = total_sq - lsq;
        const double sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
        if (sse < best.sse) {
          double thr = 0.5 * (v[p - 1] + v[p]);
          if (!(thr < v[p])) thr = v[p - 1];
          best = {static_cast<int>(f), thr, sse, p};
        }
      }
    }
    // Require a real reduction, not rounding noise.
    if (best.feature >= 0 && !(best.sse < parent_sse * (1 - 1e-12))) best.feature = -1;
    return best;
  }

  const RowMatrix& x_;
  const Vector& y_;
  const ForestOptions& opts_;
  Rng& rng_;
  std::size_t d_;
};

}  // namespace

ForestModel fit_random_forest(const RowMatrix& x_in, const Vector& y_in, const ForestOptions& opts) {
  if (x_in.rows() != y_in.size()) throw ContractViolation("fit_random_forest: X/y row mismatch");
  if (x_in.rows() < 1) throw InsufficientData("fit_random_forest: no training rows");
  if (opts.n_trees < 1) throw ConfigError("fit_random_forest: n_trees must be >= 1");
  if (opts.min_samples_leaf < 1) throw ConfigError("fit_random_forest: min_samples_leaf must be >= 1");

  const auto n = static_cast<std::size_t>(x_in.rows());
  const auto d = static_cast<std::size_t>(x_in.cols());

  // Canonical row order: lexicographic on (features, target).
  std::vector<std::size_t> canon(n);
  std::iota(canon.begin(), canon.end(), 0);
  std::sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t k = 0; k < d; ++k) {
      const double xa = x_in(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
      const double xb = x_in(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
      if (xa != xb) return xa < xb;
    }
    return y_in(static_cast<Eigen::Index>(a)) < y_in(static_cast<Eigen::Index>(b));
  });
  RowMatrix x(x_in.rows(), x_in.cols());
  Vector y(y_in.size());
  for (std::size_t i = 0; i < n; ++i) {
    x.row(static_cast<Eigen::Index>(i)) = x_in.row(static_cast<Eigen::Index>(canon[i]));
    y(static_cast<Eigen::Index>(i)) = y_in(static_cast<Eigen::Index>(canon[i]));
  }

  ForestModel model;
  model.options = opts;
  model.n_features = d;
  model.trees.resize(static_cast<std::size_t>(opts.n_trees));

#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < opts.n_trees; ++t) {
    Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> rows(n);
    if (opts.bootstrap) {
      for (auto& r : rows) r = rng.index(n);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    TreeBuilder builder(x, y, opts, rng);
    model.trees[static_cast<std::size_t>(t)] = builder.grow(std::move(rows));
  }
  return model;
}

double predict_forest(const ForestModel& m, std::span<const double> x) {
  if (x.size() != m.n_features) throw ContractViolation("predict_forest: width mismatch");
  double s = 0;
  for (auto& t : m.trees) s += t.predict(x);
  return s / static_cast<double>(m.trees.size());
}

}  // namespace avm::regress
