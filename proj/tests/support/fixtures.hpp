#pragma once

// Shared fixture builders for the test binaries.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "avm/common.hpp"
#include "avm/listing.hpp"
#include "avm/som.hpp"

namespace avm::testing {

inline CleanListing make_listing(std::string id, int zip = 8005, double rooms = 3.5, double space = 80,
                                 double rent = 2800, Date date = {2016, 6, 1}) {
  CleanListing l;
  l.listing_id = std::move(id);
  l.snapshot_date = date;
  l.offer_kind = OfferKind::Rent;
  l.zip = zip;
  l.property_type = PropertyType::Apartment;
  l.rooms = rooms;
  l.floor = 2;
  l.living_space_m2 = space;
  l.year_built = 1990;
  l.gross_rent_chf = rent;
  l.lat = 47.39;
  l.lng = 8.52;
  return l;
}

/// Random clean listings spread over a handful of zips and days.
inline std::vector<CleanListing> random_listings(std::size_t n, std::uint64_t seed, int n_zips = 12,
                                                 int n_days = 30) {
  Rng rng(seed);
  std::vector<CleanListing> out;
  out.reserve(n);
  const PropertyType types[] = {PropertyType::Apartment, PropertyType::Duplex, PropertyType::SingleHouse,
                                PropertyType::Studio};
  for (std::size_t i = 0; i < n; ++i) {
    CleanListing l;
    l.listing_id = "L" + std::to_string(seed) + "-" + std::to_string(i);
    l.snapshot_date = Date{2016, 6, 1}.plus_days(static_cast<long>(rng.index(static_cast<std::size_t>(n_days))));
    l.zip = 8000 + static_cast<int>(rng.index(static_cast<std::size_t>(n_zips)));
    l.property_type = types[rng.index(4)];
    l.rooms = 1.0 + 0.5 * static_cast<double>(rng.index(12));
    l.floor = static_cast<int>(rng.index(10)) - 1;
    l.living_space_m2 = std::round(20 + 200 * rng.uniform());
    l.year_built = 1900 + static_cast<int>(rng.index(116));
    l.gross_rent_chf = std::round(500 + 6000 * rng.uniform());
    l.lat = 46.0 + 1.5 * rng.uniform();
    l.lng = 6.5 + 3.0 * rng.uniform();
    out.push_back(std::move(l));
  }
  return out;
}

inline RowMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("avm_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace avm::testing

