#include "avm/analytics.hpp"

#include <algorithm>
#include <cmath>

namespace avm::analytics {

using nlohmann::json;

void MarketQuery::check() const {
  if (!(min_rooms > 0)) throw DomainError("min_rooms: must be > 0");
  if (!(min_living_space_m2 > 0)) throw DomainError("min_living_space_m2: must be > 0");
  if (!(max_rent_chf > 0)) throw DomainError("max_rent_chf: must be > 0");
  if (period.end < period.start) throw DomainError("period: start after end");
}

bool match(const CleanListing& l, const MarketQuery& q) {
  return l.rooms >= q.min_rooms && l.living_space_m2 >= q.min_living_space_m2 && l.gross_rent_chf <= q.max_rent_chf &&
         q.period.contains(l.snapshot_date) && (q.zips.empty() || q.zips.count(l.zip) > 0);
}

ZipAvailability zip_availability(std::span<const CleanListing> listings, const MarketQuery& q,
                                 std::span<const int> universe) {
  q.check();
  ZipAvailability out;
  for (int z : universe)
    if (q.zips.empty() || q.zips.count(z)) out[z];
  for (auto& l : listings) {
    if (!q.period.contains(l.snapshot_date)) continue;
    if (!q.zips.empty() && !q.zips.count(l.zip)) continue;
    ZipStat& s = out[l.zip];
    ++s.n_total;
    if (match(l, q)) ++s.n_match;
  }
  for (auto& [zip, s] : out)
    if (s.n_total > 0) s.pct = 100.0 * s.n_match / s.n_total;
  return out;
}

BudgetCurve budget_sweep(std::span<const CleanListing> listings, int zip, double min_rooms, double min_space,
                         std::span<const double> budgets, const Period& period) {
  if (budgets.empty()) throw DomainError("budgets: must be non-empty");
  for (std::size_t i = 1; i < budgets.size(); ++i)
    if (!(budgets[i - 1] <= budgets[i])) throw DomainError("budgets: must be ascending");
  BudgetCurve c;
  c.zip = zip;
  c.budgets.assign(budgets.begin(), budgets.end());
  std::vector<double> eligible_rents;
  for (auto& l : listings) {
    if (l.zip != zip || !period.contains(l.snapshot_date)) continue;
    ++c.n_total;
    if (l.rooms >= min_rooms && l.living_space_m2 >= min_space) eligible_rents.push_back(l.gross_rent_chf);
  }
  if (c.n_total == 0) {
    c.no_data = true;
    return c;
  }
  std::sort(eligible_rents.begin(), eligible_rents.end());
  c.pct_matched.reserve(budgets.size());
  for (double b : budgets) {
    const auto n = std::upper_bound(eligible_rents.begin(), eligible_rents.end(), b) - eligible_rents.begin();
    c.pct_matched.push_back(100.0 * static_cast<double>(n) / c.n_total);
  }
  return c;
}

int bin_index(double v, double lo, double hi, int n_bins) {
  if (!(hi > lo)) return 0;
  const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * n_bins));
  return std::clamp(b, 0, n_bins - 1);
}

MatchHistograms match_histograms(std::span<const CleanListing> listings, int zip, const MarketQuery& q, int n_bins) {
  q.check();
  if (n_bins < 1) throw DomainError("n_bins: must be >= 1");
  MatchHistograms h;
  h.zip = zip;
  std::vector<const CleanListing*> pop;
  for (auto& l : listings)
    if (l.zip == zip && q.period.contains(l.snapshot_date)) pop.push_back(&l);
  h.n_total = static_cast<int>(pop.size());
  const char* names[3] = {"rooms", "living_space_m2", "gross_rent_chf"};
  auto value = [](const CleanListing& l, int d) {
    return d == 0 ? l.rooms : d == 1 ? l.living_space_m2 : l.gross_rent_chf;
  };
  for (int d = 0; d < 3; ++d) h.dims[static_cast<std::size_t>(d)].dimension = names[d];
  if (pop.empty()) {
    h.no_data = true;
    return h;
  }
  MarketQuery in_zip = q;
  in_zip.zips.clear();
  for (int d = 0; d < 3; ++d) {
    Histogram& hist = h.dims[static_cast<std::size_t>(d)];
    double lo = value(*pop.front(), d), hi = lo;
    for (auto* l : pop) {
      lo = std::min(lo, value(*l, d));
      hi = std::max(hi, value(*l, d));
    }
    if (!(hi > lo)) hi = lo + 1.0;
    hist.bin_edges.resize(static_cast<std::size_t>(n_bins) + 1);
    for (int b = 0; b <= n_bins; ++b) hist.bin_edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / n_bins;
    hist.bin_edges.back() = hi;
    hist.total_counts.assign(static_cast<std::size_t>(n_bins), 0);
    hist.matched_counts.assign(static_cast<std::size_t>(n_bins), 0);
    for (auto* l : pop) {
      const auto b = static_cast<std::size_t>(bin_index(value(*l, d), lo, hi, n_bins));
      ++hist.total_counts[b];
      if (match(*l, in_zip)) ++hist.matched_counts[b];
    }
  }
  for (auto* l : pop) h.n_match += match(*l, in_zip);
  return h;
}

MarketQuery query_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("query: expected object");
  MarketQuery q;
  auto num = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw DomainError(std::string(key) + ": expected number");
    out = j.at(key).get<double>();
  };
  num("min_rooms", q.min_rooms);
  num("min_living_space_m2", q.min_living_space_m2);
  num("min_space", q.min_living_space_m2);
  num("max_rent_chf", q.max_rent_chf);
  num("max_rent", q.max_rent_chf);
  if (j.contains("period")) {
    const json& p = j.at("period");
    auto date = [&](const char* key, Date& out) {
      if (!p.contains(key)) return;
      if (!p.at(key).is_string()) throw DomainError(std::string("period.") + key + ": expected ISO date");
      auto d = Date::parse(p.at(key).get<std::string>());
      if (!d) throw DomainError(std::string("period.") + key + ": expected ISO date");
      out = *d;
    };
    date("start", q.period.start);
    date("end", q.period.end);
  }
  if (j.contains("zips")) {
    if (!j.at("zips").is_array()) throw DomainError("zips: expected array of integers");
    for (auto& z : j.at("zips")) {
      if (!z.is_number_integer()) throw DomainError("zips: expected array of integers");
      q.zips.insert(z.get<int>());
    }
  }
  q.check();
  return q;
}

json to_json(const MarketQuery& q) {
  return json{{"min_rooms", q.min_rooms},
              {"min_living_space_m2", q.min_living_space_m2},
              {"max_rent_chf", q.max_rent_chf},
              {"period", {{"start", q.period.start.to_string()}, {"end", q.period.end.to_string()}}},
              {"zips", q.zips}};
}

json to_json(const ZipAvailability& z) {
  json out = json::object();
  for (auto& [zip, s] : z) {
    json e{{"n_total", s.n_total}, {"n_match", s.n_match}};
    e["pct"] = s.pct ? json(*s.pct) : json("NO_DATA");
    out[std::to_string(zip)] = std::move(e);
  }
  return out;
}

json to_json(const BudgetCurve& c) {
  json j{{"zip", c.zip}, {"budgets", c.budgets}, {"n_total", c.n_total}};
  if (c.no_data) j["pct_matched"] = "NO_DATA";
  else j["pct_matched"] = c.pct_matched;
  return j;
}

json to_json(const MatchHistograms& h) {
  json j{{"zip", h.zip}, {"n_total", h.n_total}, {"n_match", h.n_match}};
  if (h.no_data) {
    j["histograms"] = "NO_DATA";
    return j;
  }
  json dims = json::object();
  for (auto& d : h.dims)
    dims[d.dimension] = {{"bin_edges", d.bin_edges}, {"total_counts", d.total_counts}, {"matched_counts", d.matched_counts}};
  j["histograms"] = std::move(dims);
  return j;
}

}  // namespace avm::analytics
