#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "avm/ingest.hpp"

namespace avm::geo {

enum class GeocodeSource { Stub, Cache, External };
std::string_view to_string(GeocodeSource s);

struct LatLng {
  double lat = 0;
  double lng = 0;
};

struct GeocodeEntry {
  std::string address;  // normalized key
  double lat = 0;
  double lng = 0;
  GeocodeSource source = GeocodeSource::Stub;
};

/// Lowercase, strip ASCII punctuation, collapse whitespace, trim.
std::string normalize_address(std::string_view address);

/// Remote geocoding backend. Returns nullopt when the address is unknown;
/// throws Unavailable on transport or service failure.
class ExternalGeocoder {
 public:
  virtual ~ExternalGeocoder() = default;
  virtual std::optional<LatLng> lookup(const std::string& normalized_address) = 0;
};

/// Queries `GET <base_url>/geocode?address=<normalized>` and expects
/// `{"lat": .., "lng": ..}`; 404 means unknown.
std::unique_ptr<ExternalGeocoder> make_http_geocoder(const std::string& base_url);

/// Stub table + persistent cache + optional external client.
/// Lookups may run concurrently; cache writes are serialized.
class GeocoderClient {
 public:
  GeocoderClient() = default;

  /// Stub file: JSON map address -> {lat, lng}. Keys are normalized on load.
  void load_stub(const std::filesystem::path& stub_file);
  void add_stub(std::string_view address, LatLng at);
  /// Cache file is read if present and rewritten after every miss.
  void set_cache_file(std::filesystem::path cache_file);
  void set_external(std::unique_ptr<ExternalGeocoder> client) { external_ = std::move(client); }
  void set_bounds(const ingest::CleanBounds& b) { bounds_ = b; }

  GeocodeEntry geocode(std::string_view address);

  std::size_t cache_size() const;

 private:
  void persist_cache_locked() const;

  std::map<std::string, LatLng> stub_;
  std::map<std::string, LatLng> cache_;
  std::optional<std::filesystem::path> cache_file_;
  std::unique_ptr<ExternalGeocoder> external_;
  ingest::CleanBounds bounds_;
  mutable std::shared_mutex mu_;
};

inline GeocodeEntry geocode(std::string_view address, GeocoderClient& client) {
  return client.geocode(address);
}

}  // namespace avm::geo
