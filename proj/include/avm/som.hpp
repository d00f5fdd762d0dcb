#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "avm/common.hpp"

namespace avm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace avm

namespace avm::som {

enum class InitKind { LinearPca, RandomUniform };

struct SomConfig {
  int rows = 10;
  int cols = 10;
  int epochs = 20;
  double sigma_start = 5;
  double sigma_end = 0.5;
  InitKind init = InitKind::LinearPca;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is broken.
  void check() const;
  int nodes() const { return rows * cols; }
};

/// Default configuration for `data`: about 5*sqrt(n) nodes, grid aspect
/// from the ratio of the two leading principal variances, each side in
/// [2, 50]; 20 epochs; sigma from max(rows, cols)/2 down to 0.5.
SomConfig default_config(const RowMatrix& data, std::uint64_t seed = 0);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Trained map. Codebook rows live in z-scored space; callers pass raw
/// vectors and the model normalizes them. Immutable once built.
struct SomModel {
  SomConfig config;
  RowMatrix codebook;  // nodes x d, normalized space, node = r * cols + c
  NormStats norm;
  std::vector<std::string> feature_names;

  std::size_t dim() const { return norm.mean.size(); }
  std::size_t nodes() const { return static_cast<std::size_t>(codebook.rows()); }

  std::vector<double> normalize(std::span<const double> raw) const;
  RowMatrix normalize(const RowMatrix& raw) const;
  double denormalize(std::size_t dim, double z) const { return z * norm.stddev[dim] + norm.mean[dim]; }
};

/// Dimension subset used by BMU search. nullopt = all dimensions.
using Mask = std::optional<std::vector<std::size_t>>;

/// Model with the initial codebook only (no epochs run). Exposed so callers
/// can measure how much training improved the fit.
SomModel initialize(const RowMatrix& data, const SomConfig& config,
                    std::vector<std::string> feature_names = {});

/// Batch SOM. Deterministic given (data, config). Throws EmptyData for n=0
/// and ConfigError naming the column when a column is constant (n >= 2).
SomModel train(const RowMatrix& data, const SomConfig& config,
               std::vector<std::string> feature_names = {});
/// As `train`, but a constant column gets unit scale instead of an error.
SomModel train_allow_constant(const RowMatrix& data, const SomConfig& config,
                              std::vector<std::string> feature_names = {});

/// Best-matching unit for a raw-space vector; ties -> lowest node index.
std::size_t bmu(const SomModel& model, std::span<const double> x, const Mask& mask = std::nullopt);
/// Same, for a vector already in normalized space.
std::size_t bmu_normalized(const SomModel& model, std::span<const double> z,
                           const Mask& mask = std::nullopt);

/// Mean Euclidean distance (normalized space, masked dims) from each raw
/// data row to its BMU.
double quantization_error(const SomModel& model, const RowMatrix& data, const Mask& mask = std::nullopt);

struct ComponentPlane {
  std::string name;
  RowMatrix normalized;    // rows x cols
  RowMatrix denormalized;  // rows x cols
};
std::vector<ComponentPlane> component_planes(const SomModel& model);

/// Partition of raw data row indices by BMU (all dims). Every node appears
/// as a key, possibly with an empty list.
std::map<std::size_t, std::vector<std::size_t>> node_assignments(const SomModel& model,
                                                                 const RowMatrix& data);

/// Resolves feature names to dimension indices; throws ContractViolation on
/// an unknown name or an empty list.
std::vector<std::size_t> mask_from_names(const SomModel& model, std::span<const std::string> names);

nlohmann::json to_json(const SomModel& model);
SomModel som_from_json(const nlohmann::json& j);
/// Plane as CSV: `rows` lines of `cols` comma-separated values.
std::string plane_to_csv(const RowMatrix& plane);

}  // namespace avm::som
