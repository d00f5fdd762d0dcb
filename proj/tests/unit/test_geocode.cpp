#include <doctest.h>

#include <fstream>
#include <thread>

#include "avm/geocode.hpp"
#include "fixtures.hpp"

#include <httplib.h>

using namespace avm;
using namespace avm::geo;

namespace {

class CountingGeocoder : public ExternalGeocoder {
 public:
  explicit CountingGeocoder(int* calls, bool fail = false) : calls_(calls), fail_(fail) {}
  std::optional<LatLng> lookup(const std::string& a) override {
    ++*calls_;
    if (fail_) throw Unavailable("backend down");
    if (a == "limmatquai 2 8001 zurich") return LatLng{47.3717, 8.5440};
    if (a == "far away 1") return LatLng{52.52, 13.40};
    return std::nullopt;
  }

 private:
  int* calls_;
  bool fail_;
};

}  // namespace

TEST_CASE("normalization lowercases, strips punctuation and collapses whitespace") {
  CHECK(normalize_address("  Bahnhofstrasse   1,  8001 ZURICH. ") == "bahnhofstrasse 1 8001 zurich");
  CHECK(normalize_address("bahnhofstrasse 1, 8001 zurich") == normalize_address("BAHNHOFSTRASSE\t1 ,8001   Zurich"));
  CHECK(normalize_address("") == "");
  CHECK(normalize_address("Zürich") == "zürich");  // non-ASCII bytes pass through
}

TEST_CASE("variants differing in case, whitespace and punctuation return identical entries") {
  GeocoderClient c;
  c.add_stub("bahnhofstrasse 1, 8001 zurich", {47.3680, 8.5390});
  const char* variants[] = {"bahnhofstrasse 1, 8001 zurich", "Bahnhofstrasse 1 8001 Zurich",
                            "  BAHNHOFSTRASSE  1,,8001 zurich!", "bahnhofstrasse\t1.\n8001 zurich"};
  for (const char* v : variants) {
    auto e = c.geocode(v);
    CHECK(e.address == "bahnhofstrasse 1 8001 zurich");
    CHECK(e.lat == 47.3680);
    CHECK(e.lng == 8.5390);
  }
}

TEST_CASE("stub hit first, then cache hit") {
  GeocoderClient c;
  c.add_stub("bahnhofstrasse 1, 8001 zurich", {47.3680, 8.5390});
  auto first = c.geocode("bahnhofstrasse  1, 8001   zurich");
  CHECK(first.source == GeocodeSource::Stub);
  CHECK(first.lat == 47.3680);
  CHECK(first.lng == 8.5390);
  auto second = c.geocode("bahnhofstrasse 1, 8001 zurich");
  CHECK(second.source == GeocodeSource::Cache);
  CHECK(second.lat == first.lat);
  CHECK(second.lng == first.lng);
}

TEST_CASE("unknown address with stub only is NotFound") {
  GeocoderClient c;
  c.add_stub("a street 1", {47.0, 8.0});
  CHECK_THROWS_AS(c.geocode("nowhere 9"), NotFound);
}

TEST_CASE("external client is queried once per address and failures surface as Unavailable") {
  int calls = 0;
  GeocoderClient c;
  c.set_external(std::make_unique<CountingGeocoder>(&calls));
  auto e = c.geocode("Limmatquai 2, 8001 Zurich");
  CHECK(e.source == GeocodeSource::External);
  CHECK(c.geocode("limmatquai 2 8001 zurich").source == GeocodeSource::Cache);
  CHECK(calls == 1);
  CHECK_THROWS_AS(c.geocode("unknown road"), NotFound);
  CHECK_THROWS_AS(c.geocode("Far away 1"), DomainError);  // outside the bounding box
  CHECK(c.cache_size() == 1);

  int down_calls = 0;
  GeocoderClient down;
  down.set_external(std::make_unique<CountingGeocoder>(&down_calls, true));
  CHECK_THROWS_AS(down.geocode("limmatquai 2 8001 zurich"), Unavailable);
}

TEST_CASE("the cache persists across clients and stub files load with normalized keys") {
  avm::testing::TempDir dir("geocode");
  const auto stub = dir.path() / "stub.json";
  {
    std::ofstream out(stub);
    out << R"({"Bahnhofstrasse 1, 8001 Zurich": {"lat": 47.368, "lng": 8.539}})";
  }
  const auto cache = dir.path() / "cache.json";
  {
    GeocoderClient c;
    c.load_stub(stub);
    c.set_cache_file(cache);
    CHECK(c.geocode("bahnhofstrasse 1 8001 zurich").source == GeocodeSource::Stub);
  }
  GeocoderClient fresh;
  fresh.set_cache_file(cache);
  auto e = fresh.geocode("BAHNHOFSTRASSE 1, 8001 ZURICH");
  CHECK(e.source == GeocodeSource::Cache);
  CHECK(e.lat == 47.368);
}

TEST_CASE("the HTTP geocoder talks to a JSON endpoint") {
  httplib::Server srv;
  srv.Get("/geocode", [](const httplib::Request& req, httplib::Response& res) {
    if (req.get_param_value("address") == "seestrasse 5 8002 zurich") {
      res.set_content(R"({"lat": 47.36, "lng": 8.53})", "application/json");
    } else {
      res.status = 404;
    }
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  GeocoderClient c;
  c.set_external(make_http_geocoder("http://127.0.0.1:" + std::to_string(port)));
  auto e = c.geocode("Seestrasse 5, 8002 Zurich");
  CHECK(e.source == GeocodeSource::External);
  CHECK(e.lat == 47.36);
  CHECK_THROWS_AS(c.geocode("nothing here"), NotFound);
  srv.stop();
  t.join();

  GeocoderClient dead;
  dead.set_external(make_http_geocoder("http://127.0.0.1:1"));
  CHECK_THROWS_AS(dead.geocode("anything"), Unavailable);
}
