#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "avm/listing.hpp"

namespace avm::ingest {

enum class Format { JsonLines, Csv };

/// Parses a format tag ("jsonl" / "csv"); throws UsageError otherwise.
Format format_from_string(std::string_view tag);

struct LineError {
  std::size_t line_no = 0;  // 1-based; for CSV the header is line 1
  std::string reason;
};

struct ParseResult {
  std::vector<RawListing> listings;
  std::vector<LineError> errors;
};

/// Malformed records become LineErrors; the stream keeps going.
/// Throws IoError if the stream cannot be read.
ParseResult parse_listings(std::istream& in, Format format);

void write_jsonl(std::ostream& out, std::span<const RawListing> rows);
void write_jsonl(std::ostream& out, std::span<const CleanListing> rows);
void write_csv(std::ostream& out, std::span<const CleanListing> rows);
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const RawListing& row);
void write_jsonl_row(std::ostream& out, const RawListing& row);

/// Sanity bounds a listing must satisfy to be clean. Overridable.
struct CleanBounds {
  int zip_min = 1000, zip_max = 9699;
  double rooms_max = 30;                      // rooms in (0, rooms_max]
  double space_min = 5, space_max = 2000;     // (space_min, space_max]
  double rent_min = 100, rent_max = 100000;   // (rent_min, rent_max]
  int year_min = 1200;                        // [year_min, snapshot year]
  int floor_min = -3, floor_max = 50;
  double lat_min = 45.7, lat_max = 48.0;
  double lng_min = 5.8, lng_max = 10.7;

  bool in_swiss_bbox(double lat, double lng) const {
    return lat >= lat_min && lat <= lat_max && lng >= lng_min && lng <= lng_max;
  }
};

struct RejectReport {
  std::string listing_id;
  std::vector<std::string> failed_rules;  // "field: reason", every failure
};

using ValidationResult = std::variant<CleanListing, RejectReport>;

ValidationResult validate(const RawListing& raw, const CleanBounds& bounds = {});

nlohmann::json to_json(const RejectReport& r);

/// Hot-deck KNN imputation. For each missing numeric field, draws the value
/// uniformly from the k nearest records that have it, where distance is
/// Euclidean over the z-scored numeric fields both records share. Present
/// values are never altered. Donor values come from the input, never from
/// other imputations, so the result does not depend on processing order.
std::vector<RawListing> impute(std::span<const RawListing> dataset, int k, std::uint64_t seed);

/// Numeric fields the imputer may fill, in processing order.
inline constexpr std::size_t kImputableFieldCount = 20;
const std::array<std::string_view, kImputableFieldCount>& imputable_field_names();
/// Reads imputable field `f` of `r` (nullopt when missing).
std::optional<double> imputable_field(const RawListing& r, std::size_t f);

/// Fixed regression feature order. Every encoder and decoder uses this.
inline constexpr std::size_t kFeatureCount = 11;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "is_apartment", "is_duplex", "is_single_house", "is_studio", "rooms", "floor",
    "living_space_m2", "year_built", "zip", "lng", "lat"};

struct FeatureVector {
  std::array<double, kFeatureCount> values{};
  double target_rent_chf = 0;
};

FeatureVector encode_features(const CleanListing& c);

}  // namespace avm::ingest
