#include "avm/osm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <exception>
#include <istream>
#include <ostream>

#include <expat.h>

namespace avm::osm {

using nlohmann::json;

namespace {

struct NodeEntry {
  std::int64_t id;
  double lat;
  double lng;
};

class NodeTable {
 public:
  void add(std::int64_t id, double lat, double lng) {
    if (!nodes_.empty() && id <= nodes_.back().id) sorted_ = false;
    nodes_.push_back({id, lat, lng});
  }

  const NodeEntry* find(std::int64_t id) {
    if (!sorted_) {
      std::stable_sort(nodes_.begin(), nodes_.end(),
                       [](const NodeEntry& a, const NodeEntry& b) { return a.id < b.id; });
      sorted_ = true;
    }
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                               [](const NodeEntry& n, std::int64_t v) { return n.id < v; });
    if (it == nodes_.end() || it->id != id) return nullptr;
    return &*it;
  }

  std::size_t bytes() const { return nodes_.capacity() * sizeof(NodeEntry); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<NodeEntry> nodes_;
  bool sorted_ = true;
};

template <class T>
bool parse_num(const char* s, T& out) {
  const char* end = s + std::strlen(s);
  auto [p, ec] = std::from_chars(s, end, out);
  return ec == std::errc{} && p == end;
}

const char* attr(const XML_Char** atts, const char* name) {
  for (int i = 0; atts[i]; i += 2)
    if (std::strcmp(atts[i], name) == 0) return atts[i + 1];
  return nullptr;
}

enum class Context { None, Way, Relation };

struct State {
  XML_Parser parser = nullptr;
  const BuildingSink* sink = nullptr;
  NodeTable nodes;
  ParseStats stats;
  Context ctx = Context::None;
  std::int64_t way_id = 0;
  std::vector<std::int64_t> refs;
  bool is_building = false;
  std::exception_ptr error;

  void fail(const std::string& msg) {
    if (!error)
      error = std::make_exception_ptr(ParseError(msg, XML_GetCurrentByteIndex(parser)));
    XML_StopParser(parser, XML_FALSE);
  }

  void finish_way() {
    ++stats.ways;
    if (!is_building) return;
    ++stats.building_ways;
    if (refs.size() < 4 || refs.front() != refs.back()) {
      ++stats.invalid_ring;
      return;
    }
    Building b;
    b.building_id = way_id;
    b.footprint.reserve(refs.size());
    for (auto r : refs) {
      const NodeEntry* n = nodes.find(r);
      if (!n) {
        ++stats.dangling;
        return;
      }
      b.footprint.push_back({n->lat, n->lng});
    }
    b.n_nodes = static_cast<int>(refs.size());
    const LatLng c = centroid(b.footprint);
    b.centroid_lat = c.lat;
    b.centroid_lng = c.lng;
    ++stats.buildings;
    (*sink)(std::move(b));
  }
};

void XMLCALL on_start(void* ud, const XML_Char* name, const XML_Char** atts) {
  auto& st = *static_cast<State*>(ud);
  if (st.error) return;
  if (std::strcmp(name, "node") == 0) {
    const char* id = attr(atts, "id");
    const char* lat = attr(atts, "lat");
    const char* lon = attr(atts, "lon");
    std::int64_t nid;
    double la, lo;
    // Deleted/redacted nodes in history extracts carry no coordinates.
    if (!id || !lat || !lon) return;
    if (!parse_num(id, nid) || !parse_num(lat, la) || !parse_num(lon, lo))
      return st.fail("bad node attributes");
    st.nodes.add(nid, la, lo);
    ++st.stats.nodes;
  } else if (std::strcmp(name, "way") == 0) {
    const char* id = attr(atts, "id");
    if (!id || !parse_num(id, st.way_id)) return st.fail("way without valid id");
    st.ctx = Context::Way;
    st.refs.clear();
    st.is_building = false;
  } else if (std::strcmp(name, "relation") == 0) {
    st.ctx = Context::Relation;
    st.is_building = false;
  } else if (std::strcmp(name, "nd") == 0 && st.ctx == Context::Way) {
    const char* ref = attr(atts, "ref");
    std::int64_t r;
    if (!ref || !parse_num(ref, r)) return st.fail("nd without valid ref");
    st.refs.push_back(r);
  } else if (std::strcmp(name, "tag") == 0 && st.ctx != Context::None) {
    const char* k = attr(atts, "k");
    const char* v = attr(atts, "v");
    if (k && std::strcmp(k, "building") == 0) st.is_building = !(v && std::strcmp(v, "no") == 0);
  }
}

void XMLCALL on_end(void* ud, const XML_Char* name) {
  auto& st = *static_cast<State*>(ud);
  if (st.error) return;
  if (std::strcmp(name, "way") == 0 && st.ctx == Context::Way) {
    try {
      st.finish_way();
    } catch (...) {
      st.error = std::current_exception();
      XML_StopParser(st.parser, XML_FALSE);
    }
    st.ctx = Context::None;
  } else if (std::strcmp(name, "relation") == 0 && st.ctx == Context::Relation) {
    if (st.is_building) ++st.stats.relations_skipped;
    st.ctx = Context::None;
  }
}

struct ParserHandle {
  XML_Parser p;
  ParserHandle() : p(XML_ParserCreate(nullptr)) {
    if (!p) throw std::bad_alloc();
  }
  ~ParserHandle() { XML_ParserFree(p); }
  ParserHandle(const ParserHandle&) = delete;
  ParserHandle& operator=(const ParserHandle&) = delete;
};

}  // namespace

ParseStats parse_osm_buildings(std::istream& xml, const BuildingSink& sink) {
  if (!xml) throw IoError("OSM stream unreadable");
  ParserHandle handle;
  State st;
  st.parser = handle.p;
  st.sink = &sink;
  XML_SetUserData(handle.p, &st);
  XML_SetElementHandler(handle.p, on_start, on_end);

  std::vector<char> buf(1 << 16);
  for (;;) {
    xml.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = xml.gcount();
    if (xml.bad()) throw IoError("read error in OSM stream");
    const bool last = got < static_cast<std::streamsize>(buf.size());
    st.stats.bytes += static_cast<std::uint64_t>(got);
    if (XML_Parse(handle.p, buf.data(), static_cast<int>(got), last) == XML_STATUS_ERROR) {
      if (st.error) std::rethrow_exception(st.error);
      throw ParseError(std::string("malformed OSM XML: ") + XML_ErrorString(XML_GetErrorCode(handle.p)),
                       XML_GetCurrentByteIndex(handle.p));
    }
    if (st.error) std::rethrow_exception(st.error);
    if (last) break;
  }
  st.stats.node_table_bytes = st.nodes.bytes();
  return st.stats;
}

ParseOutput parse_osm_buildings(std::istream& xml) {
  ParseOutput out;
  out.stats = parse_osm_buildings(xml, [&](Building&& b) { out.buildings.push_back(std::move(b)); });
  return out;
}

LatLng centroid(std::span<const LatLng> ring) {
  if (ring.size() < 4) throw ContractViolation("centroid: ring needs at least 4 vertices");
  if (!(ring.front() == ring.back())) throw ContractViolation("centroid: ring is not closed");

  // Shift to the first vertex so large absolute coordinates do not cancel.
  const double x0 = ring[0].lng, y0 = ring[0].lat;
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  double a2 = 0, cx = 0, cy = 0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double xi = ring[i].lng - x0, yi = ring[i].lat - y0;
    const double xj = ring[i + 1].lng - x0, yj = ring[i + 1].lat - y0;
    const double cross = xi * yj - xj * yi;
    a2 += cross;
    cx += (xi + xj) * cross;
    cy += (yi + yj) * cross;
    min_x = std::min(min_x, xi), max_x = std::max(max_x, xi);
    min_y = std::min(min_y, yi), max_y = std::max(max_y, yi);
  }
  const double extent = std::max(max_x - min_x, max_y - min_y);
  if (std::abs(a2) > 1e-12 * extent * extent && extent > 0) {
    LatLng c{cy / (3.0 * a2) + y0, cx / (3.0 * a2) + x0};
    const bool inside_bbox = c.lng >= min_x + x0 - 1e-12 && c.lng <= max_x + x0 + 1e-12 &&
                             c.lat >= min_y + y0 - 1e-12 && c.lat <= max_y + y0 + 1e-12;
    if (inside_bbox) return c;
  }
  double sx = 0, sy = 0;
  const std::size_t m = ring.size() - 1;
  for (std::size_t i = 0; i < m; ++i) {
    sx += ring[i].lng - x0;
    sy += ring[i].lat - y0;
  }
  return {sy / m + y0, sx / m + x0};
}

json to_json(const Building& b) {
  json fp = json::array();
  for (auto& v : b.footprint) fp.push_back({v.lat, v.lng});
  return json{{"building_id", b.building_id}, {"centroid_lat", b.centroid_lat},
              {"centroid_lng", b.centroid_lng}, {"n_nodes", b.n_nodes},
              {"footprint", std::move(fp)}};
}

Building building_from_json(const json& j) {
  Building b;
  b.building_id = j.at("building_id").get<std::int64_t>();
  b.centroid_lat = j.at("centroid_lat").get<double>();
  b.centroid_lng = j.at("centroid_lng").get<double>();
  b.n_nodes = j.value("n_nodes", 0);
  if (auto it = j.find("footprint"); it != j.end())
    for (auto& v : *it) b.footprint.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
  return b;
}

void write_buildings_jsonl(std::ostream& out, std::span<const Building> buildings) {
  for (auto& b : buildings) out << to_json(b).dump() << '\n';
}

std::vector<Building> read_buildings_jsonl(std::istream& in) {
  if (!in) throw IoError("buildings stream unreadable");
  std::vector<Building> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(building_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError("buildings line " + std::to_string(line_no) + ": " + e.what(), 0);
    }
  }
  return out;
}

void write_synthetic_extract(std::ostream& out, std::size_t n_buildings, std::uint64_t seed) {
  Rng rng(seed);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"avm-synth\">\n";
  char line[160];
  // Nodes first (standard file order), then ways.
  for (std::size_t b = 0; b < n_buildings; ++b) {
    const double lat = rng.uniform(46.0, 47.7);
    const double lng = rng.uniform(6.1, 10.4);
    const double dlat = rng.uniform(0.00005, 0.0003);
    const double dlng = rng.uniform(0.00005, 0.0003);
    const double corners[4][2] = {{lat, lng}, {lat, lng + dlng}, {lat + dlat, lng + dlng}, {lat + dlat, lng}};
    for (int c = 0; c < 4; ++c) {
      std::snprintf(line, sizeof line, " <node id=\"%zu\" lat=\"%.7f\" lon=\"%.7f\" version=\"1\"/>\n",
                    b * 4 + c + 1, corners[c][0], corners[c][1]);
      out << line;
    }
  }
  for (std::size_t b = 0; b < n_buildings; ++b) {
    const std::size_t base = b * 4 + 1;
    out << " <way id=\"" << (b + 1) << "\" version=\"1\">\n";
    for (int c = 0; c < 4; ++c) out << "  <nd ref=\"" << base + c << "\"/>\n";
    out << "  <nd ref=\"" << base << "\"/>\n";
    out << "  <tag k=\"building\" v=\"yes\"/>\n </way>\n";
  }
  out << "</osm>\n";
}

}  // namespace avm::osm
