#include "avm/listing.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace avm {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kAmenityCount> kAmenityNames = {
    "view",    "balcony", "fireplace",  "cable_tv",    "isdn",
    "children_welcome", "parking", "garage", "wheelchair", "pets",
    "elevator", "group_living", "new_building", "old_building", "pool"};

constexpr std::array<std::string_view, kDistanceKindCount> kDistanceNames = {
    "public_transport", "shopping", "kindergarten", "primary_school", "secondary_school",
    "motorway"};

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

double number_field(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    if (auto d = parse_double(v.get_ref<const std::string&>())) return *d;
  }
  throw DomainError(std::string(key) + ": not a number");
}

int int_field(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_number_integer()) return v.get<int>();
  double d;
  if (v.is_number_float()) {
    d = v.get<double>();
  } else if (v.is_string()) {
    auto p = parse_double(v.get_ref<const std::string&>());
    if (!p) throw DomainError(std::string(key) + ": not an integer");
    d = *p;
  } else {
    throw DomainError(std::string(key) + ": not an integer");
  }
  if (!std::isfinite(d) || d != std::floor(d) || std::abs(d) > 1e9)
    throw DomainError(std::string(key) + ": not an integer");
  return static_cast<int>(d);
}

std::string string_field(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return v.dump();
  throw DomainError(std::string(key) + ": not a string");
}

bool has(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return false;
  return !(it->is_string() && it->get_ref<const std::string&>().empty());
}

template <class T, class F>
void opt(const json& j, const char* key, std::optional<T>& out, F&& read) {
  if (has(j, key)) out = read(j, key);
}

void put(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}
void put(json& j, const char* key, const std::optional<int>& v) {
  if (v) j[key] = *v;
}
void put(json& j, const char* key, const std::optional<std::string>& v) {
  if (v) j[key] = *v;
}

void details_to_json(json& j, const ListingDetails& d) {
  put(j, "address", d.address);
  put(j, "floor_space_m2", d.floor_space_m2);
  put(j, "room_height_m", d.room_height_m);
  put(j, "volume_m3", d.volume_m3);
  put(j, "year_renovated", d.year_renovated);
  put(j, "net_rent_chf", d.net_rent_chf);
  put(j, "expenses_chf", d.expenses_chf);
  if (d.available_from) j["available_from"] = d.available_from->to_string();
  if (d.amenities.any()) {
    json a = json::array();
    for (std::size_t i = 0; i < kAmenityCount; ++i)
      if (d.amenities.test(i)) a.push_back(kAmenityNames[i]);
    j["amenities"] = std::move(a);
  }
  if (!d.distances_m.empty()) {
    json m = json::object();
    for (auto& [k, v] : d.distances_m) m[std::string(to_string(k))] = v;
    j["distances_m"] = std::move(m);
  }
  put(j, "description", d.description);
}

std::string fmt_double(double v) { return json(v).dump(); }

}  // namespace

std::string_view to_string(OfferKind k) { return k == OfferKind::Rent ? "rent" : "sale"; }

std::string_view to_string(PropertyType t) {
  switch (t) {
    case PropertyType::Apartment: return "apartment";
    case PropertyType::Duplex: return "duplex";
    case PropertyType::SingleHouse: return "single_house";
    case PropertyType::Studio: return "studio";
    case PropertyType::Other: return "other";
  }
  return "other";
}

std::string_view to_string(Amenity a) { return kAmenityNames[static_cast<std::size_t>(a)]; }
std::string_view to_string(DistanceKind d) { return kDistanceNames[static_cast<std::size_t>(d)]; }

std::optional<OfferKind> offer_kind_from_string(std::string_view s) {
  if (s == "rent" || s == "Rent") return OfferKind::Rent;
  if (s == "sale" || s == "Sale") return OfferKind::Sale;
  return std::nullopt;
}

std::optional<Amenity> amenity_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kAmenityCount; ++i)
    if (kAmenityNames[i] == s) return static_cast<Amenity>(i);
  return std::nullopt;
}

std::optional<DistanceKind> distance_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kDistanceKindCount; ++i)
    if (kDistanceNames[i] == s) return static_cast<DistanceKind>(i);
  return std::nullopt;
}

PropertyTypeValue PropertyTypeValue::parse(std::string_view s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "apartment") return {PropertyType::Apartment, {}};
  if (lower == "duplex") return {PropertyType::Duplex, {}};
  if (lower == "single_house" || lower == "singlehouse" || lower == "single house")
    return {PropertyType::SingleHouse, {}};
  if (lower == "studio") return {PropertyType::Studio, {}};
  return {PropertyType::Other, std::string(s)};
}

std::string PropertyTypeValue::to_string() const {
  if (kind == PropertyType::Other) return other_label.empty() ? "other" : other_label;
  return std::string(avm::to_string(kind));
}

RawListing CleanListing::to_raw() const {
  RawListing r;
  r.listing_id = listing_id;
  r.snapshot_date = snapshot_date;
  r.offer_kind = offer_kind;
  r.zip = zip;
  r.property_type = PropertyTypeValue{property_type, {}};
  r.rooms = rooms;
  r.floor = floor;
  r.living_space_m2 = living_space_m2;
  r.year_built = year_built;
  r.gross_rent_chf = gross_rent_chf;
  r.lat = lat;
  r.lng = lng;
  r.details = details;
  return r;
}

json to_json(const RawListing& r) {
  json j = json::object();
  j["listing_id"] = r.listing_id;
  j["snapshot_date"] = r.snapshot_date.to_string();
  j["offer_kind"] = to_string(r.offer_kind);
  put(j, "zip", r.zip);
  if (r.property_type) j["property_type"] = r.property_type->to_string();
  put(j, "rooms", r.rooms);
  put(j, "floor", r.floor);
  put(j, "living_space_m2", r.living_space_m2);
  put(j, "year_built", r.year_built);
  put(j, "gross_rent_chf", r.gross_rent_chf);
  put(j, "lat", r.lat);
  put(j, "lng", r.lng);
  details_to_json(j, r.details);
  return j;
}

json to_json(const CleanListing& c) { return to_json(c.to_raw()); }

RawListing raw_listing_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("record is not a JSON object");
  RawListing r;
  if (!has(j, "listing_id")) throw DomainError("listing_id: missing");
  r.listing_id = string_field(j, "listing_id");
  if (!has(j, "snapshot_date")) throw DomainError("snapshot_date: missing");
  {
    auto d = Date::parse(string_field(j, "snapshot_date"));
    if (!d) throw DomainError("snapshot_date: not an ISO date");
    r.snapshot_date = *d;
  }
  if (has(j, "offer_kind")) {
    auto k = offer_kind_from_string(string_field(j, "offer_kind"));
    if (!k) throw DomainError("offer_kind: expected rent|sale");
    r.offer_kind = *k;
  }
  opt(j, "zip", r.zip, int_field);
  if (has(j, "property_type")) r.property_type = PropertyTypeValue::parse(string_field(j, "property_type"));
  opt(j, "rooms", r.rooms, number_field);
  opt(j, "floor", r.floor, int_field);
  opt(j, "living_space_m2", r.living_space_m2, number_field);
  opt(j, "year_built", r.year_built, int_field);
  opt(j, "gross_rent_chf", r.gross_rent_chf, number_field);
  opt(j, "lat", r.lat, number_field);
  opt(j, "lng", r.lng, number_field);

  ListingDetails& d = r.details;
  opt(j, "address", d.address, string_field);
  opt(j, "floor_space_m2", d.floor_space_m2, number_field);
  opt(j, "room_height_m", d.room_height_m, number_field);
  opt(j, "volume_m3", d.volume_m3, number_field);
  opt(j, "year_renovated", d.year_renovated, int_field);
  opt(j, "net_rent_chf", d.net_rent_chf, number_field);
  opt(j, "expenses_chf", d.expenses_chf, number_field);
  if (has(j, "available_from")) {
    auto a = Date::parse(string_field(j, "available_from"));
    if (!a) throw DomainError("available_from: not an ISO date");
    d.available_from = *a;
  }
  if (has(j, "amenities")) {
    const json& a = j.at("amenities");
    std::vector<std::string> names;
    if (a.is_array()) {
      for (auto& e : a) {
        if (!e.is_string()) throw DomainError("amenities: expected strings");
        names.push_back(e.get<std::string>());
      }
    } else if (a.is_string()) {
      std::stringstream ss(a.get<std::string>());
      std::string tok;
      while (std::getline(ss, tok, ';'))
        if (!tok.empty()) names.push_back(tok);
    } else {
      throw DomainError("amenities: expected array");
    }
    for (auto& n : names) {
      auto am = amenity_from_string(n);
      if (!am) throw DomainError("amenities: unknown flag '" + n + "'");
      d.amenities.set(static_cast<std::size_t>(*am));
    }
  }
  if (has(j, "distances_m")) {
    const json& m = j.at("distances_m");
    if (!m.is_object()) throw DomainError("distances_m: expected object");
    for (auto& [k, v] : m.items()) {
      auto kind = distance_kind_from_string(k);
      if (!kind) throw DomainError("distances_m: unknown key '" + k + "'");
      if (v.is_null()) continue;
      json tmp{{"d", v}};
      d.distances_m[*kind] = number_field(tmp, "d");
    }
  }
  opt(j, "description", d.description, string_field);

  if (auto bad = check_raw_invariants(r)) throw DomainError(*bad);
  return r;
}

std::optional<std::string> check_raw_invariants(const RawListing& r) {
  if (r.listing_id.empty()) return "listing_id: empty";
  auto finite = [](const char* name, const std::optional<double>& v, bool nonneg)
      -> std::optional<std::string> {
    if (!v) return std::nullopt;
    if (!std::isfinite(*v)) return std::string(name) + ": not finite";
    if (nonneg && *v < 0) return std::string(name) + ": negative";
    return std::nullopt;
  };
  const ListingDetails& d = r.details;
  for (auto check : {finite("rooms", r.rooms, false), finite("lat", r.lat, false),
                     finite("lng", r.lng, false),
                     finite("living_space_m2", r.living_space_m2, true),
                     finite("gross_rent_chf", r.gross_rent_chf, true),
                     finite("floor_space_m2", d.floor_space_m2, true),
                     finite("room_height_m", d.room_height_m, false),
                     finite("volume_m3", d.volume_m3, false),
                     finite("net_rent_chf", d.net_rent_chf, true),
                     finite("expenses_chf", d.expenses_chf, true)}) {
    if (check) return check;
  }
  for (auto& [k, v] : d.distances_m) {
    if (!std::isfinite(v)) return "distances_m." + std::string(to_string(k)) + ": not finite";
    if (v < 0) return "distances_m." + std::string(to_string(k)) + ": negative";
  }
  return std::nullopt;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"listing_id",     "snapshot_date",  "offer_kind",   "zip",
                                  "address",        "property_type",  "rooms",        "floor",
                                  "living_space_m2", "floor_space_m2", "room_height_m", "volume_m3",
                                  "year_built",     "year_renovated", "net_rent_chf", "expenses_chf",
                                  "gross_rent_chf", "available_from", "amenities"};
    for (auto n : kDistanceNames) c.push_back("distances_m." + std::string(n));
    c.push_back("description");
    c.push_back("lat");
    c.push_back("lng");
    return c;
  }();
  return cols;
}

std::vector<std::string> to_csv_row(const RawListing& r) {
  const json j = to_json(r);
  std::vector<std::string> row;
  row.reserve(csv_columns().size());
  for (const auto& col : csv_columns()) {
    if (col.rfind("distances_m.", 0) == 0) {
      auto kind = distance_kind_from_string(std::string_view(col).substr(12));
      auto it = r.details.distances_m.find(*kind);
      row.push_back(it == r.details.distances_m.end() ? "" : fmt_double(it->second));
      continue;
    }
    if (col == "amenities") {
      std::string s;
      for (std::size_t i = 0; i < kAmenityCount; ++i) {
        if (!r.details.amenities.test(i)) continue;
        if (!s.empty()) s += ';';
        s += kAmenityNames[i];
      }
      row.push_back(s);
      continue;
    }
    auto it = j.find(col);
    if (it == j.end()) {
      row.emplace_back();
    } else if (it->is_string()) {
      row.push_back(it->get<std::string>());
    } else {
      row.push_back(it->dump());
    }
  }
  return row;
}

}  // namespace avm
