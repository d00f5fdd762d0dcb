#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <json.hpp>

#include "avm/common.hpp"

namespace avm::osm {

struct LatLng {
  double lat = 0;
  double lng = 0;
  bool operator==(const LatLng&) const = default;
};

struct Building {
  std::int64_t building_id = 0;  // OSM way id
  double centroid_lat = 0;
  double centroid_lng = 0;
  std::vector<LatLng> footprint;  // closed ring, first == last
  int n_nodes = 0;
};

struct ParseStats {
  std::uint64_t bytes = 0;
  std::uint64_t nodes = 0;
  std::uint64_t ways = 0;
  std::uint64_t building_ways = 0;      // ways tagged building=<anything but "no">
  std::uint64_t buildings = 0;          // emitted
  std::uint64_t dangling = 0;           // building ways with an undefined node ref
  std::uint64_t invalid_ring = 0;       // building ways not closed or < 4 refs
  std::uint64_t relations_skipped = 0;  // building-tagged relations (not processed)
  std::uint64_t node_table_bytes = 0;
};

using BuildingSink = std::function<void(Building&&)>;

/// Single pass over an OSM XML stream. Nodes are held in a compact table;
/// everything else streams through. Ways must follow the nodes they
/// reference (standard OSM file order); a forward reference counts as dangling.
/// Throws ParseError (with byte offset) on malformed XML.
ParseStats parse_osm_buildings(std::istream& xml, const BuildingSink& sink);

struct ParseOutput {
  std::vector<Building> buildings;
  ParseStats stats;
};
ParseOutput parse_osm_buildings(std::istream& xml);

/// Area-weighted planar centroid of a closed ring, treating (lng, lat) as
/// Cartesian. Zero-area rings fall back to the mean of the distinct vertices
/// (closing vertex excluded). Throws ContractViolation on an open ring or
/// fewer than 4 vertices.
LatLng centroid(std::span<const LatLng> ring);

nlohmann::json to_json(const Building& b);
Building building_from_json(const nlohmann::json& j);

void write_buildings_jsonl(std::ostream& out, std::span<const Building> buildings);
std::vector<Building> read_buildings_jsonl(std::istream& in);

/// Writes a synthetic extract of `n_buildings` small rectangular buildings
/// (4 nodes + 1 closed way each) scattered inside the Swiss bounding box.
/// Used for throughput and memory tests.
void write_synthetic_extract(std::ostream& out, std::size_t n_buildings, std::uint64_t seed);

}  // namespace avm::osm
