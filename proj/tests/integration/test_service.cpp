#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "avm/analytics.hpp"
#include "avm/eval.hpp"
#include "avm/server.hpp"
#include "fixtures.hpp"

#include <httplib.h>

using namespace avm;
using nlohmann::json;

namespace {

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump();
}

struct Fixture {
  avm::testing::TempDir dir{"service"};
  std::vector<CleanListing> listings;
  regress::FittedModel knn9, knn3, ols;
  std::shared_ptr<index::PriceIndexModel> idx;
  std::unique_ptr<service::ApiServer> server;
  std::thread thread;
  int port = 0;

  Fixture() {
    eval::SyntheticConfig c;
    c.n = 600;
    c.seed = 4;
    c.noise_sd_chf = 80;
    c.city_centers = eval::default_city_centers();
    listings = eval::generate_synthetic(c).listings;
    const auto xy = eval::to_xy(eval::encode_all(listings));
    std::vector<std::string> names(ingest::kFeatureNames.begin(), ingest::kFeatureNames.end());
    knn9 = regress::fit(regress::Algo::Knn, xy.x, xy.y, 1, names);
    knn3 = knn9;
    knn3.model = regress::fit_knn(xy.x, xy.y, 3);
    ols = regress::fit(regress::Algo::Ols, xy.x, xy.y, 1, names);
    som::SomConfig sc;
    sc.rows = 5;
    sc.cols = 5;
    sc.sigma_start = 2.5;
    idx = std::make_shared<index::PriceIndexModel>(index::build_index(listings, sc));

    write_json(dir.path() / "knn.json", regress::to_json(knn9));
    write_json(dir.path() / "ols.json", regress::to_json(ols));
    write_json(dir.path() / "index.json", index::to_json(*idx));
    {
      store::SnapshotStore s(dir.path() / "store");
      store::append_by_date(s, listings);
    }

    service::ServerConfig cfg;
    cfg.port = 0;
    cfg.store_dir = dir.path() / "store";
    cfg.model_files = {{regress::Algo::Knn, dir.path() / "knn.json"}, {regress::Algo::Ols, dir.path() / "ols.json"}};
    cfg.index_file = dir.path() / "index.json";
    cfg.zip_universe = {9999};
    cfg.threads = 4;
    server = std::make_unique<service::ApiServer>(cfg);
    port = server->bind();
    thread = std::thread([this] { server->listen(); });
    server->wait_until_ready();
  }
  ~Fixture() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);
    return cli;
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

json get_json(const std::string& path, int expect_status) {
  auto res = fixture().client().Get(path);
  REQUIRE(res);
  CHECK(res->status == expect_status);
  return json::parse(res->body);
}

json post_json(const std::string& path, const json& body, int expect_status) {
  auto res = fixture().client().Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect_status);
  return json::parse(res->body);
}

double library_estimate(const regress::FittedModel& m) {
  RawListing raw;
  raw.listing_id = "q";
  raw.snapshot_date = Date{2016, 6, 1};
  raw.property_type = PropertyTypeValue::parse("apartment");
  raw.rooms = 3.5;
  raw.floor = 2;
  raw.living_space_m2 = 85;
  raw.year_built = 1995;
  raw.zip = 8005;
  raw.lng = 8.52;
  raw.lat = 47.39;
  raw.gross_rent_chf = 1000;
  auto v = ingest::validate(raw);
  REQUIRE(std::holds_alternative<CleanListing>(v));
  return m.predict(ingest::encode_features(std::get<CleanListing>(v)).values);
}

const std::string kEstimate =
    "/api/v1/estimate?type=apartment&rooms=3.5&floor=2&space=85&year=1995&zip=8005&lng=8.52&lat=47.39";

}  // namespace

TEST_CASE("healthz reports loaded models") {
  auto j = get_json("/api/v1/healthz", 200);
  CHECK(j["status"] == "ok");
  CHECK(j["index_loaded"] == true);
  CHECK(j["models"].size() == 2);
}

TEST_CASE("estimate passes straight through to the model") {
  auto j = get_json(kEstimate + "&model=ols", 200);
  CHECK(j["estimate_chf"].get<double>() == library_estimate(fixture().ols));
  CHECK(j["model"] == "ols");
  auto k = get_json(kEstimate + "&model=knn", 200);
  CHECK(k["estimate_chf"].get<double>() == library_estimate(regress::model_from_json(
                                               json::parse(regress::to_json(fixture().knn9).dump()))));
  get_json(kEstimate + "&model=rf", 404);
}

TEST_CASE("malformed estimate requests get field-level 400s") {
  auto j = get_json("/api/v1/estimate?type=apartment&rooms=abc&floor=2&space=85&zip=8005&lng=8.52&lat=47.39", 400);
  const auto all = j["errors"].dump();
  CHECK(all.find("rooms") != std::string::npos);
  CHECK(all.find("year") != std::string::npos);
  auto bad = get_json("/api/v1/estimate?type=apartment&rooms=3&floor=2&space=85&year=1995&zip=8005&lng=2&lat=47.39",
                      400);
  CHECK(bad["errors"].dump().find("lng") != std::string::npos);
  get_json(kEstimate + "&model=svm", 400);
}

TEST_CASE("index endpoint equals estimate_index") {
  const auto& m = *fixture().idx;
  auto j = get_json("/api/v1/index?lat=47.38&lng=8.53&strategy=median", 200);
  auto e = index::estimate_index(m, 47.38, 8.53, m.k_default(), index::Strategy::NodeMedian);
  CHECK(j["price_per_m2"].get<double>() == e.price_per_m2);
  CHECK(j["n_support"] == e.n_support);
  auto s = get_json("/api/v1/index?lat=47.38&lng=8.53&k=3&strategy=sample&seed=17", 200);
  auto es = index::estimate_index(m, 47.38, 8.53, 3, index::Strategy::SampleDraw, 17);
  CHECK(s["price_per_m2"].get<double>() == es.price_per_m2);
  get_json("/api/v1/index?lat=47.38&lng=8.53&strategy=sample", 400);
  get_json("/api/v1/index?lat=47.38&lng=8.53&k=0", 400);
  get_json("/api/v1/index?lng=8.53", 400);
}

TEST_CASE("analytics endpoints match the library") {
  auto& f = fixture();
  const Period period{{2016, 6, 1}, {2016, 6, 30}};
  const auto rows = f.server->store().query_listings(period, {}, OfferKind::Rent);

  json query = {{"min_rooms", 3}, {"min_living_space_m2", 50}, {"max_rent_chf", 3000},
                {"period", {{"start", "2016-06-01"}, {"end", "2016-06-30"}}}};
  auto q = analytics::query_from_json(query);
  std::vector<int> universe = {9999};
  auto za = post_json("/api/v1/analytics/zip-availability", {{"query", query}}, 200);
  CHECK(za == analytics::to_json(analytics::zip_availability(rows, q, universe)));
  CHECK(za["9999"]["pct"] == "NO_DATA");

  const int zip = rows.front().zip;
  std::vector<double> budgets = {1000, 2000, 3000, 4000};
  auto bs = post_json("/api/v1/analytics/budget-sweep",
                      {{"zip", zip}, {"min_rooms", 2}, {"min_space", 50}, {"budgets", budgets}}, 200);
  std::vector<CleanListing> in_zip;
  for (auto& l : rows)
    if (l.zip == zip) in_zip.push_back(l);
  CHECK(bs == analytics::to_json(analytics::budget_sweep(in_zip, zip, 2, 50, budgets)));

  auto h = post_json("/api/v1/analytics/histograms", {{"zip", zip}, {"query", query}, {"n_bins", 10}}, 200);
  CHECK(h == analytics::to_json(analytics::match_histograms(rows, zip, q, 10)));

  auto err = post_json("/api/v1/analytics/budget-sweep", {{"min_rooms", "x"}, {"budgets", {3000, 1000}}}, 400);
  CHECK(err["errors"].size() >= 2);
  post_json("/api/v1/analytics/zip-availability", {{"query", {{"min_rooms", -2}}}}, 400);
}

TEST_CASE("export streams the store contents") {
  auto& f = fixture();
  auto res = f.client().Get("/api/v1/listings/export?from=2016-06-01&to=2016-06-30&kind=rent&format=jsonl");
  REQUIRE(res);
  CHECK(res->status == 200);
  std::istringstream in(res->body);
  auto parsed = ingest::parse_listings(in, ingest::Format::JsonLines);
  CHECK(parsed.errors.empty());
  CHECK(parsed.listings.size() == f.server->store().query_listings({{2016, 6, 1}, {2016, 6, 30}}).size());

  auto csv = f.client().Get("/api/v1/listings/export?from=2030-01-01&to=2030-01-02&format=csv");
  REQUIRE(csv);
  CHECK(csv->status == 200);
  CHECK(std::count(csv->body.begin(), csv->body.end(), '\n') == 1);
  auto bad = f.client().Get("/api/v1/listings/export?from=2016-13-01&to=2016-06-30");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("feedback is accepted with 201 and retrievable") {
  json body = {{"query_echo", {{"rooms", 3.5}}},
               {"estimate_chf", 2450.0},
               {"user_direction", "too_high"},
               {"reason_code", "view"},
               {"free_text", "no lake view"}};
  auto created = post_json("/api/v1/feedback", body, 201);
  CHECK(created["user_direction"] == "too_high");
  CHECK(created["timestamp"].is_string());
  auto log = get_json("/api/v1/feedback", 200);
  REQUIRE(log.is_array());
  CHECK(log.back() == created);
  auto bad = post_json("/api/v1/feedback", {{"user_direction", "meh"}, {"free_text", std::string(1001, 'a')}}, 400);
  CHECK(bad["errors"].size() == 2);
}

TEST_CASE("reload swaps models atomically under load") {
  auto& f = fixture();
  const auto path = f.dir.path() / "knn.json";
  const double a = library_estimate(f.knn9), b = library_estimate(f.knn3);
  REQUIRE(a != b);

  std::atomic<bool> done{false};
  std::atomic<int> bad{0}, seen{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 3; ++t)
    readers.emplace_back([&] {
      auto cli = f.client();
      while (!done) {
        auto res = cli.Get(kEstimate + "&model=knn");
        if (!res || res->status != 200) {
          ++bad;
          continue;
        }
        auto j = json::parse(res->body);
        const auto v = j["model_version"].get<std::uint64_t>();
        const double expect = v % 2 == 1 ? a : b;
        if (j["estimate_chf"].get<double>() != expect) ++bad;
        ++seen;
      }
    });
  const auto start = f.server->registry().current()->version;
  REQUIRE(start % 2 == 1);
  for (int i = 0; i < 6; ++i) {
    // Even versions hold the k=3 model, odd versions the k=9 model.
    const auto next = f.server->registry().current()->version + 1;
    write_json(path, regress::to_json(next % 2 == 0 ? f.knn3 : f.knn9));
    auto r = post_json("/api/v1/admin/reload", json::object(), 200);
    CHECK(r["model_version"] == next);
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
  }
  done = true;
  for (auto& t : readers) t.join();
  CHECK(bad == 0);
  CHECK(seen > 0);
  write_json(path, regress::to_json(f.knn9));
  post_json("/api/v1/admin/reload", json::object(), 200);

  std::filesystem::remove(path);
  auto failed = f.client().Post("/api/v1/admin/reload", "{}", "application/json");
  REQUIRE(failed);
  CHECK(failed->status == 500);
  CHECK(failed->body.find("knn.json") != std::string::npos);
  get_json(kEstimate + "&model=knn", 200);  // previous generation still live
  write_json(path, regress::to_json(f.knn9));
}

TEST_CASE("startup fails with the missing path") {
  service::ServerConfig cfg;
  cfg.store_dir = fixture().dir.path() / "store2";
  cfg.model_files = {{regress::Algo::Rf, "/nonexistent/rf.json"}};
  try {
    service::ApiServer s(cfg);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/rf.json") != std::string::npos);
  }
  CHECK(service::parse_model_spec("rf=/a/b.json").first == regress::Algo::Rf);
  CHECK_THROWS_AS(service::parse_model_spec("rf"), UsageError);
}
