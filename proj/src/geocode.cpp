#include "avm/geocode.hpp"

#include <cctype>
#include <fstream>
#include <mutex>

#include <httplib.h>

namespace avm::geo {

using nlohmann::json;

std::string_view to_string(GeocodeSource s) {
  switch (s) {
    case GeocodeSource::Stub: return "stub";
    case GeocodeSource::Cache: return "cache";
    case GeocodeSource::External: return "external";
  }
  return "stub";
}

std::string normalize_address(std::string_view address) {
  std::string out;
  out.reserve(address.size());
  bool pending_space = false;
  for (unsigned char c : address) {
    // Punctuation separates tokens like whitespace does.
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  }
  return out;
}

namespace {

class HttpGeocoder final : public ExternalGeocoder {
 public:
  explicit HttpGeocoder(std::string base) : client_(std::move(base)) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(10);
  }

  std::optional<LatLng> lookup(const std::string& normalized) override {
    auto res = client_.Get("/geocode", httplib::Params{{"address", normalized}}, httplib::Headers{});
    if (!res) throw Unavailable("geocoder unreachable: " + httplib::to_string(res.error()));
    if (res->status == 404) return std::nullopt;
    if (res->status != 200) throw Unavailable("geocoder returned HTTP " + std::to_string(res->status));
    try {
      auto j = json::parse(res->body);
      return LatLng{j.at("lat").get<double>(), j.at("lng").get<double>()};
    } catch (const json::exception& e) {
      throw Unavailable(std::string("geocoder reply malformed: ") + e.what());
    }
  }

 private:
  httplib::Client client_;
};

std::map<std::string, LatLng> read_table(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open geocode table " + file.string());
  std::map<std::string, LatLng> out;
  try {
    json j = json::parse(in);
    for (auto& [k, v] : j.items())
      out[normalize_address(k)] = {v.at("lat").get<double>(), v.at("lng").get<double>()};
  } catch (const json::exception& e) {
    throw IoError("malformed geocode table " + file.string() + ": " + e.what());
  }
  return out;
}

}  // namespace

std::unique_ptr<ExternalGeocoder> make_http_geocoder(const std::string& base_url) {
  return std::make_unique<HttpGeocoder>(base_url);
}

void GeocoderClient::load_stub(const std::filesystem::path& stub_file) {
  auto t = read_table(stub_file);
  std::unique_lock lock(mu_);
  stub_.merge(t);
}

void GeocoderClient::add_stub(std::string_view address, LatLng at) {
  std::unique_lock lock(mu_);
  stub_[normalize_address(address)] = at;
}

void GeocoderClient::set_cache_file(std::filesystem::path cache_file) {
  std::unique_lock lock(mu_);
  if (std::filesystem::exists(cache_file)) cache_ = read_table(cache_file);
  cache_file_ = std::move(cache_file);
}

std::size_t GeocoderClient::cache_size() const {
  std::shared_lock lock(mu_);
  return cache_.size();
}

void GeocoderClient::persist_cache_locked() const {
  if (!cache_file_) return;
  json j = json::object();
  for (auto& [k, v] : cache_) j[k] = {{"lat", v.lat}, {"lng", v.lng}};
  auto tmp = *cache_file_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write geocode cache " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, *cache_file_);
}

GeocodeEntry GeocoderClient::geocode(std::string_view address) {
  const std::string key = normalize_address(address);
  {
    std::shared_lock lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end())
      return {key, it->second.lat, it->second.lng, GeocodeSource::Cache};
  }

  std::unique_lock lock(mu_);
  // Another writer may have filled it while we waited.
  if (auto it = cache_.find(key); it != cache_.end())
    return {key, it->second.lat, it->second.lng, GeocodeSource::Cache};

  std::optional<LatLng> hit;
  GeocodeSource source = GeocodeSource::Stub;
  if (auto it = stub_.find(key); it != stub_.end()) {
    hit = it->second;
  } else if (external_) {
    hit = external_->lookup(key);
    source = GeocodeSource::External;
  }
  if (!hit) throw NotFound("address not found: '" + key + "'");
  if (!bounds_.in_swiss_bbox(hit->lat, hit->lng))
    throw DomainError("geocode result outside Swiss bounding box for '" + key + "'");

  cache_[key] = *hit;
  persist_cache_locked();
  return {key, hit->lat, hit->lng, source};
}

}  // namespace avm::geo
