#pragma once

#include <span>
#include <string>
#include <vector>

#include "avm/kdtree.hpp"
#include "avm/listing.hpp"
#include "avm/osm.hpp"
#include "avm/som.hpp"

namespace avm::index {

enum class Strategy { NodeMedian, SampleDraw };
std::string_view to_string(Strategy s);
/// "median" | "sample"; throws UsageError otherwise.
Strategy strategy_from_string(std::string_view s);

struct Sample {
  double lat = 0;
  double lng = 0;
  double price_per_m2 = 0;
};

inline const std::vector<std::string> kIndexFeatures = {"lat", "lng", "price_per_m2"};

/// SOM over (lat, lng, price per m2) plus the training rows behind each node.
/// Immutable after construction; estimate calls are safe to run concurrently.
class PriceIndexModel {
 public:
  PriceIndexModel(som::SomModel som, std::vector<Sample> samples, int k_default, std::string built_at);

  const som::SomModel& som() const { return som_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<std::vector<std::size_t>>& assignments() const { return assignments_; }
  int k_default() const { return k_default_; }
  const std::string& built_at() const { return built_at_; }

  /// Node indices ranked by distance to (lat, lng) in the model's
  /// normalized coordinate plane, nearest first, ties to the lower index.
  void nearest_nodes(double lat, double lng, std::size_t k, std::vector<std::size_t>& out) const;
  double node_price(std::size_t node) const;

 private:
  som::SomModel som_;
  std::vector<Sample> samples_;
  std::vector<std::vector<std::size_t>> assignments_;
  std::vector<double> node_price_;
  KdTree2 node_tree_;
  int k_default_;
  std::string built_at_;
};

struct IndexEstimate {
  double price_per_m2 = 0;
  Strategy strategy = Strategy::NodeMedian;
  int k_used = 0;
  int n_support = 0;
};

/// Trains on rental listings only; price per m2 = gross rent / living space.
/// Throws EmptyData if there is no rental listing.
PriceIndexModel build_index(std::span<const CleanListing> listings, const som::SomConfig& config,
                            int k_default = 5);
/// Same, with `som::default_config` for the data.
PriceIndexModel build_index(std::span<const CleanListing> listings, std::uint64_t seed = 0, int k_default = 5);

/// k nearest nodes under the (lat, lng) mask. If none of them has training
/// rows, k doubles (capped at the node count) until the pool is non-empty.
/// NodeMedian: median codebook price of those nodes. SampleDraw: one pooled
/// training price drawn uniformly with `seed`.
IndexEstimate estimate_index(const PriceIndexModel& model, double lat, double lng, int k, Strategy strategy,
                             std::uint64_t seed = 0);

struct BuildingEstimate {
  std::int64_t building_id = 0;
  IndexEstimate estimate;
  bool in_bbox = true;
};

/// estimate_index at each centroid with k = model.k_default(); parallel over buildings.
std::vector<BuildingEstimate> index_all_buildings(const PriceIndexModel& model,
                                                  std::span<const osm::Building> buildings, Strategy strategy,
                                                  std::uint64_t seed = 0);
/// Serial reference for index_all_buildings.
std::vector<BuildingEstimate> index_all_buildings_serial(const PriceIndexModel& model,
                                                         std::span<const osm::Building> buildings,
                                                         Strategy strategy, std::uint64_t seed = 0);

nlohmann::json to_json(const PriceIndexModel& m);
PriceIndexModel price_index_from_json(const nlohmann::json& j);
/// Bulk output row: {building_id, price_per_m2, strategy, n_support}.
nlohmann::json to_json(const BuildingEstimate& e);

}  // namespace avm::index
