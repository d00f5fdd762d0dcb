#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "avm/common.hpp"
#include "avm/som.hpp"  // RowMatrix

namespace avm::regress {

using Vector = Eigen::VectorXd;

/// Per-column z-scoring fitted on training data only. Constant columns are
/// centered but not scaled, and flagged.
struct StandardScaler {
  std::vector<double> mean;
  std::vector<double> stddev;  // 1.0 for constant columns
  std::vector<bool> constant;

  static StandardScaler fit(const RowMatrix& x);
  RowMatrix transform(const RowMatrix& x) const;
  void transform(std::span<const double> x, std::span<double> out) const;
  std::size_t dim() const { return mean.size(); }
};

// ---------------------------------------------------------------- KNN

struct KnnModel {
  StandardScaler scaler;
  RowMatrix train_x;  // scaled
  Vector train_y;
  int k = 9;
};

/// Throws ConfigError when k < 1 or k > n.
KnnModel fit_knn(const RowMatrix& x, const Vector& y, int k = 9);
/// Mean target of the k nearest training rows in scaled space; distance
/// ties go to the lower row index.
double predict_knn(const KnnModel& m, std::span<const double> x);
/// Batch prediction, parallel over queries.
Vector predict_knn(const KnnModel& m, const RowMatrix& queries);

// ---------------------------------------------------------------- Random forest

enum class MaxFeatures { All, Sqrt, Third };

struct ForestOptions {
  int n_trees = 80;
  std::uint64_t seed = 0;
  int min_samples_leaf = 1;
  MaxFeatures max_features = MaxFeatures::All;
  bool bootstrap = true;  // false: every tree sees all rows (test hook)
};

/// Flat binary tree; feature < 0 marks a leaf. Rows go left when
/// x[feature] <= threshold.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0;  // mean target of the rows reaching this node
  int n_samples = 0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

struct ForestModel {
  ForestOptions options;
  std::vector<RegressionTree> trees;
  std::size_t n_features = 0;
};

/// CART regression trees on bootstrap samples. Rows are put in a canonical
/// content order before sampling, so the forest does not depend on the
/// input row order. Throws InsufficientData for n < 1.
ForestModel fit_random_forest(const RowMatrix& x, const Vector& y, const ForestOptions& opts = {});
double predict_forest(const ForestModel& m, std::span<const double> x);

// ---------------------------------------------------------------- Linear

enum class LinearKind { Ols, BayesianRidge };

struct LinearModel {
  std::vector<double> weights;  // intercept first, raw feature space
  LinearKind kind = LinearKind::Ols;
  std::optional<double> alpha;  // prior precision (BayesianRidge)
  std::optional<double> beta;   // noise precision (BayesianRidge)
  bool rank_deficient = false;
  bool converged = true;
  int iterations = 0;

  std::span<const double> slopes() const { return std::span(weights).subspan(1); }
};

/// Least squares with intercept via complete orthogonal decomposition on
/// standardized columns. Rank-deficient designs get the minimum-norm
/// solution and `rank_deficient`. Throws InsufficientData when n <= d.
LinearModel fit_ols(const RowMatrix& x, const Vector& y);

struct BayesianRidgeOptions {
  int max_iter = 300;
  double tol = 1e-4;
  /// Pins the prior precision and skips its re-estimation (test hook).
  std::optional<double> fixed_alpha;
};

/// Evidence-maximization ridge (MacKay). Throws InsufficientData for n <= 2.
LinearModel fit_bayesian_ridge(const RowMatrix& x, const Vector& y, const BayesianRidgeOptions& opts = {});
double predict_linear(const LinearModel& m, std::span<const double> x);

// ---------------------------------------------------------------- Local polynomial

struct LocalPolyOptions {
  int order = 2;
  double ridge_jitter = 1e-8;
  /// Columns that only enter the basis linearly (one-hot indicators).
  std::vector<std::size_t> linear_only;
  /// Kernel support is limited to this many multiples of the pilot k.
  int support_factor = 10;
};

struct LocalPolyModel {
  StandardScaler scaler;
  RowMatrix train_x;  // scaled
  Vector train_y;
  LocalPolyOptions options;

  std::size_t basis_size(int order) const;
  std::size_t pilot_k(int order) const;
};

/// Lazy learner: stores scaled data. Throws ConfigError for order outside 1..3.
LocalPolyModel fit_local_poly(const RowMatrix& x, const Vector& y, const LocalPolyOptions& opts = {});
/// Gaussian-weighted least squares on monomials of (x_i - x) / h around the
/// query, h = distance to the pilot-k-th nearest training row. Falls back
/// to lower orders (then a weighted mean) when support is too thin.
double predict_local_poly(const LocalPolyModel& m, std::span<const double> x);

// ---------------------------------------------------------------- Registry

enum class Algo { Knn, Rf, Ols, Bridge, Lp1, Lp2, Lp3 };
std::string_view to_string(Algo a);
/// knn|rf|ols|bridge|lp1|lp2|lp3; throws UsageError otherwise.
Algo algo_from_string(std::string_view s);
std::vector<Algo> all_algos();

using Model = std::variant<KnnModel, ForestModel, LinearModel, LocalPolyModel>;

/// A fitted predictor with its envelope metadata.
struct FittedModel {
  Algo algo = Algo::Knn;
  std::string created_at;
  std::vector<std::string> feature_names;
  nlohmann::json metadata;  // pinned hyperparameters
  Model model;

  double predict(std::span<const double> x) const;
  Vector predict(const RowMatrix& x) const;
};

/// Fits `algo` with the pinned hyperparameters (KNN k=9, RF 80 trees,
/// one-hot columns linear-only for local polynomial when `feature_names`
/// is the standard 11-feature layout).
FittedModel fit(Algo algo, const RowMatrix& x, const Vector& y, std::uint64_t seed,
                std::vector<std::string> feature_names = {});

nlohmann::json to_json(const FittedModel& m);
FittedModel model_from_json(const nlohmann::json& j);

}  // namespace avm::regress
