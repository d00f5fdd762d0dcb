#pragma once

#include <array>
#include <bitset>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avm/common.hpp"

namespace avm {

enum class OfferKind { Rent, Sale };

enum class PropertyType { Apartment, Duplex, SingleHouse, Studio, Other };

enum class Amenity {
  View,
  Balcony,
  Fireplace,
  CableTv,
  Isdn,
  ChildrenWelcome,
  Parking,
  Garage,
  Wheelchair,
  Pets,
  Elevator,
  GroupLiving,
  NewBuilding,
  OldBuilding,
  Pool,
};
inline constexpr std::size_t kAmenityCount = 15;

enum class DistanceKind {
  PublicTransport,
  Shopping,
  Kindergarten,
  PrimarySchool,
  SecondarySchool,
  Motorway,
};
inline constexpr std::size_t kDistanceKindCount = 6;

std::string_view to_string(OfferKind k);
std::string_view to_string(PropertyType t);
std::string_view to_string(Amenity a);
std::string_view to_string(DistanceKind d);
std::optional<OfferKind> offer_kind_from_string(std::string_view s);
std::optional<Amenity> amenity_from_string(std::string_view s);
std::optional<DistanceKind> distance_kind_from_string(std::string_view s);

/// Property type with the free-text label kept for `Other`.
struct PropertyTypeValue {
  PropertyType kind = PropertyType::Other;
  std::string other_label;

  static PropertyTypeValue parse(std::string_view s);
  std::string to_string() const;
  bool operator==(const PropertyTypeValue&) const = default;
};

using AmenitySet = std::bitset<kAmenityCount>;
using DistanceMap = std::map<DistanceKind, double>;

/// Fields that never gate validation; carried verbatim from raw to clean.
struct ListingDetails {
  std::optional<std::string> address;
  std::optional<double> floor_space_m2;
  std::optional<double> room_height_m;
  std::optional<double> volume_m3;
  std::optional<int> year_renovated;
  std::optional<double> net_rent_chf;
  std::optional<double> expenses_chf;
  std::optional<Date> available_from;
  AmenitySet amenities;
  DistanceMap distances_m;
  std::optional<std::string> description;

  bool operator==(const ListingDetails&) const = default;
};

/// One advertisement as crawled, before validation.
struct RawListing {
  std::string listing_id;
  Date snapshot_date;
  OfferKind offer_kind = OfferKind::Rent;
  std::optional<int> zip;
  std::optional<PropertyTypeValue> property_type;
  std::optional<double> rooms;
  std::optional<int> floor;
  std::optional<double> living_space_m2;
  std::optional<int> year_built;
  std::optional<double> gross_rent_chf;
  std::optional<double> lat;
  std::optional<double> lng;
  ListingDetails details;

  bool operator==(const RawListing&) const = default;
};

/// A listing whose required fields are present and within the clean bounds.
struct CleanListing {
  std::string listing_id;
  Date snapshot_date;
  OfferKind offer_kind = OfferKind::Rent;
  int zip = 0;
  PropertyType property_type = PropertyType::Apartment;
  double rooms = 0;
  int floor = 0;
  double living_space_m2 = 0;
  int year_built = 0;
  double gross_rent_chf = 0;
  double lat = 0;
  double lng = 0;
  ListingDetails details;

  RawListing to_raw() const;
  bool operator==(const CleanListing&) const = default;
};

// Canonical JSON object form: snake_case keys, ISO dates, absent = missing.
nlohmann::json to_json(const RawListing& r);
nlohmann::json to_json(const CleanListing& c);

/// Throws DomainError with a field-level message on bad types or values.
RawListing raw_listing_from_json(const nlohmann::json& j);

/// Checks RawListing invariants (non-empty id, finite, non-negative quantities).
/// Returns the first violation or nullopt.
std::optional<std::string> check_raw_invariants(const RawListing& r);

/// CSV column order used for both reading headers and writing exports.
const std::vector<std::string>& csv_columns();
std::vector<std::string> to_csv_row(const RawListing& r);

}  // namespace avm
