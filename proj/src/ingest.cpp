#include "avm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

namespace avm::ingest {

using nlohmann::json;

Format format_from_string(std::string_view tag) {
  if (tag == "jsonl" || tag == "json-lines" || tag == "jsonlines") return Format::JsonLines;
  if (tag == "csv") return Format::Csv;
  throw UsageError("unknown format '" + std::string(tag) + "' (expected jsonl|csv)");
}

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

// Splits one CSV record. Returns false when a quoted field is still open at
// end of `text` (caller appends the next physical line and retries).
bool split_csv(const std::string& text, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) return false;
  out.push_back(std::move(field));
  return true;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  q += '"';
  return q;
}

json csv_row_to_json(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  json j = json::object();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (row[i].empty()) continue;
    const std::string& col = header[i];
    if (col.rfind("distances_m.", 0) == 0) {
      j["distances_m"][col.substr(12)] = row[i];
    } else {
      j[col] = row[i];
    }
  }
  return j;
}

void check_stream(std::istream& in) {
  if (in.bad()) throw IoError("listing stream unreadable");
}

ParseResult parse_jsonl(std::istream& in) {
  ParseResult res;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    try {
      json j = json::parse(line);
      res.listings.push_back(raw_listing_from_json(j));
    } catch (const json::exception& e) {
      res.errors.push_back({line_no, std::string("malformed JSON: ") + e.what()});
    } catch (const DomainError& e) {
      res.errors.push_back({line_no, e.what()});
    }
  }
  check_stream(in);
  return res;
}

ParseResult parse_csv(std::istream& in) {
  ParseResult res;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<std::string> fields;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    if (!split_csv(line, header)) throw ParseError("unterminated quote in CSV header", 0);
    for (auto& h : header) {
      if (h == "listing_id" || h == "snapshot_date") continue;
      if (std::find(csv_columns().begin(), csv_columns().end(), h) == csv_columns().end())
        res.errors.push_back({line_no, "unknown column '" + h + "' ignored"});
    }
  }
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t start_line = line_no;
    strip_cr(line);
    if (blank(line)) continue;
    std::string record = line;
    bool complete = split_csv(record, fields);
    while (!complete && std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      record += '\n';
      record += line;
      complete = split_csv(record, fields);
    }
    if (!complete) {
      res.errors.push_back({start_line, "unterminated quoted field"});
      break;
    }
    if (fields.size() != header.size()) {
      res.errors.push_back({start_line, "expected " + std::to_string(header.size()) +
                                            " fields, got " + std::to_string(fields.size())});
      continue;
    }
    try {
      res.listings.push_back(raw_listing_from_json(csv_row_to_json(header, fields)));
    } catch (const DomainError& e) {
      res.errors.push_back({start_line, e.what()});
    }
  }
  check_stream(in);
  return res;
}

}  // namespace

ParseResult parse_listings(std::istream& in, Format format) {
  if (!in) throw IoError("listing stream unreadable");
  return format == Format::JsonLines ? parse_jsonl(in) : parse_csv(in);
}

void write_jsonl_row(std::ostream& out, const RawListing& row) { out << to_json(row).dump() << '\n'; }

void write_jsonl(std::ostream& out, std::span<const RawListing> rows) {
  for (const auto& r : rows) write_jsonl_row(out, r);
}

void write_jsonl(std::ostream& out, std::span<const CleanListing> rows) {
  for (const auto& r : rows) write_jsonl_row(out, r.to_raw());
}

void write_csv_header(std::ostream& out) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_csv_row(std::ostream& out, const RawListing& row) {
  auto cells = to_csv_row(row);
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_escape(cells[i]);
  out << '\n';
}

void write_csv(std::ostream& out, std::span<const CleanListing> rows) {
  write_csv_header(out);
  for (const auto& r : rows) write_csv_row(out, r.to_raw());
}

// ---------------------------------------------------------------------------
// validate

ValidationResult validate(const RawListing& raw, const CleanBounds& b) {
  RejectReport rep;
  rep.listing_id = raw.listing_id;
  auto fail = [&](const char* field, const std::string& why) {
    rep.failed_rules.push_back(std::string(field) + ": " + why);
  };

  if (raw.listing_id.empty()) fail("listing_id", "empty");

  if (!raw.zip) fail("zip", "missing");
  else if (*raw.zip < b.zip_min || *raw.zip > b.zip_max) fail("zip", "out of range");

  if (!raw.property_type) fail("property_type", "missing");
  else if (raw.property_type->kind == PropertyType::Other)
    fail("property_type", "unsupported '" + raw.property_type->to_string() + "'");

  if (!raw.rooms) fail("rooms", "missing");
  else if (!(*raw.rooms > 0 && *raw.rooms <= b.rooms_max)) fail("rooms", "out of range");

  if (!raw.floor) fail("floor", "missing");
  else if (*raw.floor < b.floor_min || *raw.floor > b.floor_max) fail("floor", "out of range");

  if (!raw.living_space_m2) fail("living_space_m2", "missing");
  else if (!(*raw.living_space_m2 > b.space_min && *raw.living_space_m2 <= b.space_max))
    fail("living_space_m2", "out of range");

  if (!raw.year_built) fail("year_built", "missing");
  else if (*raw.year_built < b.year_min || *raw.year_built > raw.snapshot_date.year)
    fail("year_built", "out of range");

  if (!raw.gross_rent_chf) fail("gross_rent_chf", "missing");
  else if (!(*raw.gross_rent_chf > b.rent_min && *raw.gross_rent_chf <= b.rent_max))
    fail("gross_rent_chf", "out of range");

  if (!raw.lat) fail("lat", "missing");
  else if (!(*raw.lat >= b.lat_min && *raw.lat <= b.lat_max)) fail("lat", "out of range");

  if (!raw.lng) fail("lng", "missing");
  else if (!(*raw.lng >= b.lng_min && *raw.lng <= b.lng_max)) fail("lng", "out of range");

  if (!rep.failed_rules.empty()) return rep;

  CleanListing c;
  c.listing_id = raw.listing_id;
  c.snapshot_date = raw.snapshot_date;
  c.offer_kind = raw.offer_kind;
  c.zip = *raw.zip;
  c.property_type = raw.property_type->kind;
  c.rooms = *raw.rooms;
  c.floor = *raw.floor;
  c.living_space_m2 = *raw.living_space_m2;
  c.year_built = *raw.year_built;
  c.gross_rent_chf = *raw.gross_rent_chf;
  c.lat = *raw.lat;
  c.lng = *raw.lng;
  c.details = raw.details;
  return c;
}

json to_json(const RejectReport& r) {
  return json{{"listing_id", r.listing_id}, {"failed_rules", r.failed_rules}};
}

// ---------------------------------------------------------------------------
// impute

const std::array<std::string_view, kImputableFieldCount>& imputable_field_names() {
  static constexpr std::array<std::string_view, kImputableFieldCount> names = {
      "zip",
      "rooms",
      "floor",
      "living_space_m2",
      "floor_space_m2",
      "room_height_m",
      "volume_m3",
      "year_built",
      "year_renovated",
      "net_rent_chf",
      "expenses_chf",
      "gross_rent_chf",
      "lat",
      "lng",
      "distances_m.public_transport",
      "distances_m.shopping",
      "distances_m.kindergarten",
      "distances_m.primary_school",
      "distances_m.secondary_school",
      "distances_m.motorway"};
  return names;
}

namespace {

template <class T>
std::optional<double> as_double(const std::optional<T>& v) {
  if (!v) return std::nullopt;
  return static_cast<double>(*v);
}

void set_imputable(RawListing& r, std::size_t f, double v) {
  auto as_int = [](double x) { return static_cast<int>(std::lround(x)); };
  ListingDetails& d = r.details;
  switch (f) {
    case 0: r.zip = as_int(v); break;
    case 1: r.rooms = v; break;
    case 2: r.floor = as_int(v); break;
    case 3: r.living_space_m2 = v; break;
    case 4: d.floor_space_m2 = v; break;
    case 5: d.room_height_m = v; break;
    case 6: d.volume_m3 = v; break;
    case 7: r.year_built = as_int(v); break;
    case 8: d.year_renovated = as_int(v); break;
    case 9: d.net_rent_chf = v; break;
    case 10: d.expenses_chf = v; break;
    case 11: r.gross_rent_chf = v; break;
    case 12: r.lat = v; break;
    case 13: r.lng = v; break;
    default: d.distances_m[static_cast<DistanceKind>(f - 14)] = v; break;
  }
}

}  // namespace

std::optional<double> imputable_field(const RawListing& r, std::size_t f) {
  const ListingDetails& d = r.details;
  switch (f) {
    case 0: return as_double(r.zip);
    case 1: return r.rooms;
    case 2: return as_double(r.floor);
    case 3: return r.living_space_m2;
    case 4: return d.floor_space_m2;
    case 5: return d.room_height_m;
    case 6: return d.volume_m3;
    case 7: return as_double(r.year_built);
    case 8: return as_double(d.year_renovated);
    case 9: return d.net_rent_chf;
    case 10: return d.expenses_chf;
    case 11: return r.gross_rent_chf;
    case 12: return r.lat;
    case 13: return r.lng;
    default: {
      if (f >= kImputableFieldCount) throw ContractViolation("imputable field index out of range");
      auto it = d.distances_m.find(static_cast<DistanceKind>(f - 14));
      if (it == d.distances_m.end()) return std::nullopt;
      return it->second;
    }
  }
}

std::vector<RawListing> impute(std::span<const RawListing> dataset, int k, std::uint64_t seed) {
  if (dataset.empty()) throw EmptyData("impute: empty dataset");
  if (k < 1) throw ConfigError("impute: k must be >= 1");
  constexpr std::size_t F = kImputableFieldCount;
  const std::size_t n = dataset.size();

  // z-scored value table; NaN marks missing.
  std::vector<double> z(n * F, std::nan(""));
  std::vector<double> raw(n * F, std::nan(""));
  for (std::size_t f = 0; f < F; ++f) {
    double sum = 0, sq = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (auto v = imputable_field(dataset[i], f)) {
        raw[i * F + f] = *v;
        sum += *v;
        ++cnt;
      }
    }
    if (cnt == 0) continue;
    const double mean = sum / cnt;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(raw[i * F + f])) sq += (raw[i * F + f] - mean) * (raw[i * F + f] - mean);
    double sd = cnt > 1 ? std::sqrt(sq / (cnt - 1)) : 0.0;
    if (!(sd > 0)) sd = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(raw[i * F + f])) z[i * F + f] = (raw[i * F + f] - mean) / sd;
  }

  std::vector<RawListing> out(dataset.begin(), dataset.end());
  const auto kk = static_cast<std::size_t>(k);

#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
    const auto i = static_cast<std::size_t>(si);
    const double* zi = &z[i * F];
    bool any_missing = false, any_present = false;
    for (std::size_t f = 0; f < F; ++f) (std::isnan(zi[f]) ? any_missing : any_present) = true;
    if (!any_missing || !any_present) continue;

    // Distance over shared present fields; shared set is independent of the
    // missing field being filled since that field is absent in record i.
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* zj = &z[j * F];
      double d2 = 0;
      bool shared = false;
      for (std::size_t f = 0; f < F; ++f) {
        if (std::isnan(zi[f]) || std::isnan(zj[f])) continue;
        shared = true;
        d2 += (zi[f] - zj[f]) * (zi[f] - zj[f]);
      }
      if (shared) dist.emplace_back(std::sqrt(d2), j);
    }
    std::sort(dist.begin(), dist.end());

    Rng rng(mix_seed(seed, i));
    std::vector<std::size_t> donors;
    for (std::size_t f = 0; f < F; ++f) {
      if (!std::isnan(zi[f])) continue;
      donors.clear();
      for (auto& [d, j] : dist) {
        if (!std::isnan(raw[j * F + f])) donors.push_back(j);
        if (donors.size() == kk) break;
      }
      if (donors.empty()) continue;
      const std::size_t pick = donors[rng.index(donors.size())];
      set_imputable(out[i], f, raw[pick * F + f]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// encode

FeatureVector encode_features(const CleanListing& c) {
  FeatureVector fv;
  switch (c.property_type) {
    case PropertyType::Apartment: fv.values[0] = 1; break;
    case PropertyType::Duplex: fv.values[1] = 1; break;
    case PropertyType::SingleHouse: fv.values[2] = 1; break;
    case PropertyType::Studio: fv.values[3] = 1; break;
    case PropertyType::Other: throw ContractViolation("encode_features: unsupported property type");
  }
  fv.values[4] = c.rooms;
  fv.values[5] = c.floor;
  fv.values[6] = c.living_space_m2;
  fv.values[7] = c.year_built;
  fv.values[8] = c.zip;
  fv.values[9] = c.lng;
  fv.values[10] = c.lat;
  fv.target_rent_chf = c.gross_rent_chf;
  return fv;
}

}  // namespace avm::ingest
