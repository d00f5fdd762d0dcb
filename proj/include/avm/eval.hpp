#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avm/ingest.hpp"
#include "avm/regress.hpp"

namespace avm::eval {

/// Seeded Fisher-Yates shuffle of 0..n-1, then prefix split:
/// train gets round(n * train_fraction) rows. Throws InsufficientData for
/// n < 5 or when either side would be empty.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed);

template <class T>
std::pair<std::vector<T>, std::vector<T>> split(std::span<const T> dataset, double train_fraction,
                                                std::uint64_t seed) {
  auto [tr, te] = split_indices(dataset.size(), train_fraction, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  out.first.reserve(tr.size());
  out.second.reserve(te.size());
  for (auto i : tr) out.first.push_back(dataset[i]);
  for (auto i : te) out.second.push_back(dataset[i]);
  return out;
}

/// |A - P| / A. Throws DomainError when A <= 0.
double compute_are(double actual, double predicted);

struct EvalReport {
  std::string algo;
  std::size_t n_test = 0;
  double median_are_pct = 0;
  double pct_le_1 = 0;   // ARE <= 1%
  double pct_lt_5 = 0;   // ARE <  5%
  double pct_lt_15 = 0;  // ARE < 15%
  std::uint64_t seed = 0;
  std::optional<std::string> error;  // set when the algorithm failed on this run
};

/// Summary of per-row AREs (fractions, not percent).
EvalReport report_from_ares(std::string algo, std::span<const double> ares, std::uint64_t seed = 0);

using PredictFn = std::function<double(std::span<const double>)>;

/// Applies `predict` to every test row. Throws EmptyData on an empty test set.
EvalReport evaluate(const PredictFn& predict, std::span<const ingest::FeatureVector> test, std::string algo = {},
                    std::uint64_t seed = 0);

struct Xy {
  RowMatrix x;
  regress::Vector y;
};
Xy to_xy(std::span<const ingest::FeatureVector> rows);
std::vector<ingest::FeatureVector> encode_all(std::span<const CleanListing> listings);

/// For each seed: split 80/20, fit every algorithm on train, evaluate on
/// test. Reports are ordered by (seed, algo) as given. A failing algorithm
/// yields a report with `error` set.
std::vector<EvalReport> benchmark_all(std::span<const ingest::FeatureVector> dataset,
                                      std::span<const regress::Algo> algos, std::span<const std::uint64_t> seeds,
                                      double train_fraction = 0.8);

/// Median over the given algorithm's successful reports of median_are_pct.
double median_of_medians(std::span<const EvalReport> reports, std::string_view algo);

/// Display name used in the report table ("Random Forest", "KNN", ...).
std::string display_name(std::string_view algo);
std::string render_table(std::span<const EvalReport> reports);
std::string render_csv(std::span<const EvalReport> reports);

// ---------------------------------------------------------------- synthetic data

struct CityCenter {
  double lat = 0;
  double lng = 0;
  double base_chf_per_m2 = 0;
  int zip_base = 8000;
};

struct SyntheticConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  double noise_sd_chf = 0;
  std::vector<CityCenter> city_centers;
  double spread_deg = 0.04;  // sd of the coordinate scatter around a center
  Date first_date{2016, 6, 1};
  int days = 30;

  void check() const;
};

/// Zurich, Geneva and Basel with distinct price levels.
std::vector<CityCenter> default_city_centers();

struct SyntheticDataset {
  std::vector<CleanListing> listings;
  std::vector<double> true_rent;  // noise-free rent per listing
};

/// Rent = space * base(nearest center) * (1 + exp(-km/2))
///        * (1 + 0.1 (year_built - 1950) / 65) * type_factor * (1 + 0.01 floor)
///        + N(0, noise_sd), where type_factor is 1.15 house, 1.10 studio,
///        1.05 duplex, 1.0 apartment.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

/// Equirectangular distance in km; adequate at city scale.
double km_between(double lat1, double lng1, double lat2, double lng2);

}  // namespace avm::eval
