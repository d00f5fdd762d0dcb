#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "avm/listing.hpp"

namespace avm::analytics {

struct MarketQuery {
  double min_rooms = 1;
  double min_living_space_m2 = 1;
  double max_rent_chf = 1e9;
  Period period{{1900, 1, 1}, {2999, 12, 31}};
  std::set<int> zips;  // empty = all

  /// Throws DomainError when a threshold is not positive or start > end.
  void check() const;
};

/// rooms >= min, space >= min, rent <= max, date in period, zip filter.
bool match(const CleanListing& l, const MarketQuery& q);

struct ZipStat {
  int n_total = 0;
  int n_match = 0;
  std::optional<double> pct;  // nullopt = no data
};
using ZipAvailability = std::map<int, ZipStat>;

/// Per-zip counts of listings in the period and of those matching `q`.
/// Zips listed in `universe` but absent from the data are reported with
/// no data.
ZipAvailability zip_availability(std::span<const CleanListing> listings, const MarketQuery& q,
                                 std::span<const int> universe = {});

struct BudgetCurve {
  int zip = 0;
  std::vector<double> budgets;
  std::vector<double> pct_matched;  // empty when no_data
  int n_total = 0;
  bool no_data = false;
};

/// pct_matched[i] = 100 * |{rooms >=, space >=, rent <= budgets[i]}| / n_total,
/// with n_total = every listing in the zip during the period. Throws
/// DomainError when budgets is empty or not ascending.
BudgetCurve budget_sweep(std::span<const CleanListing> listings, int zip, double min_rooms, double min_space,
                         std::span<const double> budgets, const Period& period = {{1900, 1, 1}, {2999, 12, 31}});

struct Histogram {
  std::string dimension;
  std::vector<double> bin_edges;  // n_bins + 1
  std::vector<int> total_counts;
  std::vector<int> matched_counts;
};

struct MatchHistograms {
  int zip = 0;
  int n_total = 0;
  int n_match = 0;
  bool no_data = false;
  std::array<Histogram, 3> dims;  // rooms, living_space_m2, gross_rent_chf
};

/// Equal-width bins over [min, max] of the zip's listings in q.period;
/// matched rows use the same edges.
MatchHistograms match_histograms(std::span<const CleanListing> listings, int zip, const MarketQuery& q,
                                 int n_bins = 20);

/// Index of `v` among `n_bins` equal-width bins spanning [lo, hi]; the top
/// edge belongs to the last bin.
int bin_index(double v, double lo, double hi, int n_bins);

MarketQuery query_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MarketQuery& q);
nlohmann::json to_json(const ZipAvailability& z);
nlohmann::json to_json(const BudgetCurve& c);
nlohmann::json to_json(const MatchHistograms& h);

}  // namespace avm::analytics
