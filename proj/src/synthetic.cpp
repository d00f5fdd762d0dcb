#include <algorithm>
#include <cmath>
#include <limits>

#include "avm/eval.hpp"

namespace avm::eval {

void SyntheticConfig::check() const {
  if (n < 1) throw ConfigError("synthetic: n must be >= 1");
  if (!(noise_sd_chf >= 0)) throw ConfigError("synthetic: noise_sd_chf must be >= 0");
  if (city_centers.empty()) throw ConfigError("synthetic: at least one city center required");
  if (!(spread_deg >= 0)) throw ConfigError("synthetic: spread_deg must be >= 0");
  if (days < 1) throw ConfigError("synthetic: days must be >= 1");
}

std::vector<CityCenter> default_city_centers() {
  return {{47.3769, 8.5417, 30.0, 8000}, {46.2044, 6.1432, 26.0, 1200}, {47.5596, 7.5886, 16.0, 4000}};
}

double km_between(double lat1, double lng1, double lat2, double lng2) {
  constexpr double kKmPerDeg = 111.32;
  const double mean_lat = 0.5 * (lat1 + lat2) * M_PI / 180.0;
  const double dx = (lng2 - lng1) * kKmPerDeg * std::cos(mean_lat);
  const double dy = (lat2 - lat1) * kKmPerDeg;
  return std::sqrt(dx * dx + dy * dy);
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.check();
  const ingest::CleanBounds bounds;
  Rng rng(cfg.seed);
  SyntheticDataset ds;
  ds.listings.reserve(cfg.n);
  ds.true_rent.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    CleanListing l;
    l.listing_id = "syn-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
    l.snapshot_date = cfg.first_date.plus_days(static_cast<long>(rng.index(static_cast<std::size_t>(cfg.days))));
    l.offer_kind = OfferKind::Rent;

    const CityCenter& home = cfg.city_centers[rng.index(cfg.city_centers.size())];
    l.lat = std::clamp(home.lat + cfg.spread_deg * rng.normal(), bounds.lat_min, bounds.lat_max);
    l.lng = std::clamp(home.lng + cfg.spread_deg * rng.normal(), bounds.lng_min, bounds.lng_max);

    l.rooms = 1.0 + 0.5 * static_cast<double>(rng.index(12));  // 1, 1.5, ..., 6.5
    l.living_space_m2 = 25.0 * l.rooms * rng.uniform(0.8, 1.2);
    l.year_built = 1900 + static_cast<int>(rng.index(116));  // 1900..2015
    l.floor = static_cast<int>(rng.index(9));
    const double u = rng.uniform();
    l.property_type = u < 0.7    ? PropertyType::Apartment
                      : u < 0.8  ? PropertyType::Duplex
                      : u < 0.9  ? PropertyType::SingleHouse
                                 : PropertyType::Studio;

    // Price is driven by the nearest center, which may differ from `home`.
    const CityCenter* nearest = &cfg.city_centers.front();
    double km = std::numeric_limits<double>::infinity();
    for (const auto& c : cfg.city_centers) {
      const double d = km_between(l.lat, l.lng, c.lat, c.lng);
      if (d < km) {
        km = d;
        nearest = &c;
      }
    }
    l.zip = std::min(nearest->zip_base + static_cast<int>(km), nearest->zip_base + 99);

    const double type_factor = l.property_type == PropertyType::SingleHouse ? 1.15
                               : l.property_type == PropertyType::Studio    ? 1.10
                               : l.property_type == PropertyType::Duplex    ? 1.05
                                                                            : 1.0;
    const double truth = l.living_space_m2 * nearest->base_chf_per_m2 * (1.0 + 1.0 * std::exp(-km / 2.0)) *
                         (1.0 + 0.1 * (l.year_built - 1950) / 65.0) * type_factor * (1.0 + 0.01 * l.floor);
    double rent = truth + (cfg.noise_sd_chf > 0 ? cfg.noise_sd_chf * rng.normal() : 0.0);
    // Keep every record inside the clean bounds.
    rent = std::clamp(rent, bounds.rent_min + 1.0, bounds.rent_max);
    l.gross_rent_chf = rent;
    ds.listings.push_back(std::move(l));
    ds.true_rent.push_back(truth);
  }
  return ds;
}

}  // namespace avm::eval
