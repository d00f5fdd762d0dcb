#include "avm/spatial_index.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>

#include "avm/ingest.hpp"

namespace avm::index {

using nlohmann::json;

std::string_view to_string(Strategy s) { return s == Strategy::NodeMedian ? "median" : "sample"; }

Strategy strategy_from_string(std::string_view s) {
  if (s == "median" || s == "node_median") return Strategy::NodeMedian;
  if (s == "sample" || s == "sample_draw") return Strategy::SampleDraw;
  throw UsageError("unknown strategy '" + std::string(s) + "' (expected median|sample)");
}

namespace {

constexpr std::size_t kLat = 0, kLng = 1, kPrice = 2;

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RowMatrix sample_matrix(const std::vector<Sample>& samples) {
  RowMatrix m(static_cast<Eigen::Index>(samples.size()), 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    m(r, 0) = samples[i].lat;
    m(r, 1) = samples[i].lng;
    m(r, 2) = samples[i].price_per_m2;
  }
  return m;
}

std::vector<Sample> rental_samples(std::span<const CleanListing> listings) {
  std::vector<Sample> s;
  s.reserve(listings.size());
  for (auto& l : listings) {
    if (l.offer_kind != OfferKind::Rent) continue;
    s.push_back({l.lat, l.lng, l.gross_rent_chf / l.living_space_m2});
  }
  if (s.empty()) throw EmptyData("build_index: no rental listings");
  if (s.size() < 100) std::cerr << "warning: build_index: only " << s.size() << " listings\n";
  return s;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PriceIndexModel::PriceIndexModel(som::SomModel som, std::vector<Sample> samples, int k_default,
                                 std::string built_at)
    : som_(std::move(som)), samples_(std::move(samples)), k_default_(k_default), built_at_(std::move(built_at)) {
  if (som_.feature_names != kIndexFeatures)
    throw ConfigError("price index SOM must have features [lat, lng, price_per_m2]");
  if (k_default_ < 1) throw ConfigError("price index k_default must be >= 1");
  auto parts = som::node_assignments(som_, sample_matrix(samples_));
  assignments_.resize(som_.nodes());
  for (auto& [node, rows] : parts) assignments_[node] = std::move(rows);
  node_price_.resize(som_.nodes());
  std::vector<KdTree2::Point> pts(som_.nodes());
  for (std::size_t u = 0; u < som_.nodes(); ++u) {
    const auto r = static_cast<Eigen::Index>(u);
    node_price_[u] = som_.denormalize(kPrice, som_.codebook(r, kPrice));
    pts[u] = {som_.codebook(r, kLat), som_.codebook(r, kLng)};
  }
  node_tree_ = KdTree2(std::move(pts));
}

void PriceIndexModel::nearest_nodes(double lat, double lng, std::size_t k, std::vector<std::size_t>& out) const {
  const double zlat = (lat - som_.norm.mean[kLat]) / som_.norm.stddev[kLat];
  const double zlng = (lng - som_.norm.mean[kLng]) / som_.norm.stddev[kLng];
  node_tree_.knn(zlat, zlng, k, out);
}

double PriceIndexModel::node_price(std::size_t node) const { return node_price_.at(node); }

PriceIndexModel build_index(std::span<const CleanListing> listings, const som::SomConfig& config, int k_default) {
  auto samples = rental_samples(listings);
  auto som = som::train_allow_constant(sample_matrix(samples), config, kIndexFeatures);
  return PriceIndexModel(std::move(som), std::move(samples), k_default, now_iso());
}

PriceIndexModel build_index(std::span<const CleanListing> listings, std::uint64_t seed, int k_default) {
  auto samples = rental_samples(listings);
  const RowMatrix m = sample_matrix(samples);
  auto som = som::train_allow_constant(m, som::default_config(m, seed), kIndexFeatures);
  return PriceIndexModel(std::move(som), std::move(samples), k_default, now_iso());
}

IndexEstimate estimate_index(const PriceIndexModel& model, double lat, double lng, int k, Strategy strategy,
                             std::uint64_t seed) {
  if (k < 1) throw ContractViolation("estimate_index: k must be >= 1");
  if (model.samples().empty()) throw ContractViolation("estimate_index: model has no training samples");
  if (!std::isfinite(lat) || !std::isfinite(lng)) throw ContractViolation("estimate_index: non-finite coordinate");

  const std::size_t nodes = model.som().nodes();
  std::vector<std::size_t> ranked;
  model.nearest_nodes(lat, lng, static_cast<std::size_t>(k), ranked);
  auto pool_size = [&](std::size_t upto) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < upto; ++i) s += model.assignments()[ranked[i]].size();
    return s;
  };
  std::size_t used = ranked.size();
  if (pool_size(used) == 0) {
    model.nearest_nodes(lat, lng, nodes, ranked);
    while (used < nodes && pool_size(used) == 0) used = std::min(nodes, used * 2);
  }

  IndexEstimate est;
  est.strategy = strategy;
  est.k_used = static_cast<int>(used);
  est.n_support = static_cast<int>(pool_size(used));

  if (strategy == Strategy::NodeMedian) {
    std::vector<double> prices(used);
    for (std::size_t i = 0; i < used; ++i) prices[i] = model.node_price(ranked[i]);
    est.price_per_m2 = median_of(std::move(prices));
    if (!(est.price_per_m2 > 0)) {
      // Only reachable through never-updated initial nodes; use the rows behind them.
      std::vector<double> pooled;
      for (std::size_t i = 0; i < used; ++i)
        for (auto r : model.assignments()[ranked[i]]) pooled.push_back(model.samples()[r].price_per_m2);
      est.price_per_m2 = median_of(std::move(pooled));
    }
  } else {
    Rng rng(seed);
    std::size_t pick = rng.index(static_cast<std::size_t>(est.n_support));
    for (std::size_t i = 0; i < used; ++i) {
      const auto& rows = model.assignments()[ranked[i]];
      if (pick < rows.size()) {
        est.price_per_m2 = model.samples()[rows[pick]].price_per_m2;
        break;
      }
      pick -= rows.size();
    }
  }
  return est;
}

namespace {

BuildingEstimate one_building(const PriceIndexModel& model, const osm::Building& b, Strategy strategy,
                              std::uint64_t seed) {
  static const ingest::CleanBounds bounds;
  BuildingEstimate e;
  e.building_id = b.building_id;
  e.in_bbox = bounds.in_swiss_bbox(b.centroid_lat, b.centroid_lng);
  e.estimate = estimate_index(model, b.centroid_lat, b.centroid_lng, model.k_default(), strategy, seed);
  return e;
}

}  // namespace

std::vector<BuildingEstimate> index_all_buildings_serial(const PriceIndexModel& model,
                                                         std::span<const osm::Building> buildings,
                                                         Strategy strategy, std::uint64_t seed) {
  std::vector<BuildingEstimate> out(buildings.size());
  for (std::size_t i = 0; i < buildings.size(); ++i) out[i] = one_building(model, buildings[i], strategy, seed);
  return out;
}

std::vector<BuildingEstimate> index_all_buildings(const PriceIndexModel& model,
                                                  std::span<const osm::Building> buildings, Strategy strategy,
                                                  std::uint64_t seed) {
  std::vector<BuildingEstimate> out(buildings.size());
  const auto n = static_cast<std::ptrdiff_t>(buildings.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    out[ui] = one_building(model, buildings[ui], strategy, seed);
  }
  return out;
}

json to_json(const PriceIndexModel& m) {
  json samples = json::array();
  for (auto& s : m.samples()) samples.push_back({s.lat, s.lng, s.price_per_m2});
  return json{{"format", "avm.price_index"}, {"version", 1},        {"built_at", m.built_at()},
              {"k_default", m.k_default()},   {"som", som::to_json(m.som())}, {"samples", std::move(samples)}};
}

PriceIndexModel price_index_from_json(const json& j) {
  if (j.value("format", "") != "avm.price_index") throw ConfigError("not an avm.price_index document");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported avm.price_index version");
  std::vector<Sample> samples;
  for (auto& s : j.at("samples"))
    samples.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
  return PriceIndexModel(som::som_from_json(j.at("som")), std::move(samples), j.at("k_default").get<int>(),
                         j.value("built_at", ""));
}

json to_json(const BuildingEstimate& e) {
  json j{{"building_id", e.building_id},
         {"price_per_m2", e.estimate.price_per_m2},
         {"strategy", to_string(e.estimate.strategy)},
         {"n_support", e.estimate.n_support}};
  if (!e.in_bbox) j["out_of_bbox"] = true;
  return j;
}

}  // namespace avm::index
