// avm: command-line front end for the valuation engine.

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "avm/analytics.hpp"
#include "avm/eval.hpp"
#include "avm/geocode.hpp"
#include "avm/ingest.hpp"
#include "avm/osm.hpp"
#include "avm/regress.hpp"
#include "avm/server.hpp"
#include "avm/spatial_index.hpp"
#include "avm/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avm;

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

ingest::Format guess_format(const std::string& path, const std::string& tag) {
  if (!tag.empty()) return ingest::format_from_string(tag);
  return fs::path(path).extension() == ".csv" ? ingest::Format::Csv : ingest::Format::JsonLines;
}

/// Reads a listing file and keeps the records that validate.
std::vector<CleanListing> read_clean(const std::string& path, const std::string& format_tag = {}) {
  auto in = open_in(path);
  auto parsed = ingest::parse_listings(in, guess_format(path, format_tag));
  std::vector<CleanListing> out;
  std::size_t rejected = 0;
  for (const auto& r : parsed.listings) {
    auto v = ingest::validate(r);
    if (auto* c = std::get_if<CleanListing>(&v)) out.push_back(std::move(*c));
    else ++rejected;
  }
  if (!parsed.errors.empty() || rejected)
    std::cerr << "warning: " << path << ": skipped " << parsed.errors.size() << " malformed and " << rejected
              << " invalid records\n";
  return out;
}

json read_json(const std::string& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  auto out = open_out(path);
  out << text;
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

Period period_from(const std::string& from, const std::string& to) {
  Period p{{1900, 1, 1}, {2999, 12, 31}};
  if (!from.empty()) p.start = Date::parse_or_throw(from);
  if (!to.empty()) p.end = Date::parse_or_throw(to);
  if (p.end < p.start) throw UsageError("--from is after --to");
  return p;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string in, format, out, rejects, store, geocode_stub, geocode_cache, geocode_url;
  int impute_k = 0;
  std::uint64_t seed = 42;
};

int run_ingest(const IngestArgs& a) {
  auto in = open_in(a.in);
  auto parsed = ingest::parse_listings(in, guess_format(a.in, a.format));
  std::vector<RawListing> raws = std::move(parsed.listings);

  if (!a.geocode_stub.empty() || !a.geocode_url.empty()) {
    geo::GeocoderClient client;
    if (!a.geocode_stub.empty()) client.load_stub(a.geocode_stub);
    if (!a.geocode_cache.empty()) client.set_cache_file(a.geocode_cache);
    if (!a.geocode_url.empty()) client.set_external(geo::make_http_geocoder(a.geocode_url));
    std::size_t hits = 0, misses = 0;
    for (auto& r : raws) {
      if ((r.lat && r.lng) || !r.details.address) continue;
      try {
        auto e = client.geocode(*r.details.address);
        r.lat = e.lat;
        r.lng = e.lng;
        ++hits;
      } catch (const NotFound&) {
        ++misses;
      }
    }
    std::cerr << "geocoded " << hits << " addresses, " << misses << " unknown\n";
  }

  if (a.impute_k > 0 && !raws.empty()) raws = ingest::impute(raws, a.impute_k, a.seed);

  std::vector<CleanListing> clean;
  std::vector<ingest::RejectReport> rejects;
  for (const auto& r : raws) {
    auto v = ingest::validate(r);
    if (auto* c = std::get_if<CleanListing>(&v)) clean.push_back(std::move(*c));
    else rejects.push_back(std::get<ingest::RejectReport>(v));
  }

  if (!a.out.empty()) {
    auto out = open_out(a.out);
    if (fs::path(a.out).extension() == ".csv") ingest::write_csv(out, clean);
    else ingest::write_jsonl(out, clean);
  }
  if (!a.rejects.empty()) {
    auto out = open_out(a.rejects);
    for (const auto& e : parsed.errors) out << json{{"line_no", e.line_no}, {"reason", e.reason}}.dump() << '\n';
    for (const auto& r : rejects) out << ingest::to_json(r).dump() << '\n';
  }
  std::cerr << "parsed " << raws.size() << " records (" << parsed.errors.size() << " malformed lines), "
            << clean.size() << " clean, " << rejects.size() << " rejected\n";
  if (!a.store.empty()) {
    store::SnapshotStore st(a.store);
    auto s = store::append_by_date(st, clean);
    std::cerr << "store: added " << s.added << ", duplicates " << s.duplicates << ", updated " << s.updated << '\n';
  }
  return 0;
}

int run_osm(const std::string& in_path, const std::string& out_path) {
  auto in = open_in(in_path);
  auto out = open_out(out_path);
  auto stats = osm::parse_osm_buildings(in, [&](osm::Building&& b) { out << osm::to_json(b).dump() << '\n'; });
  std::cerr << "nodes " << stats.nodes << ", ways " << stats.ways << ", building ways " << stats.building_ways
            << ", buildings " << stats.buildings << ", dangling " << stats.dangling << ", invalid rings "
            << stats.invalid_ring << ", relations skipped " << stats.relations_skipped << '\n';
  return 0;
}

int run_train(const std::string& algo_s, const std::string& train, const std::string& out, std::uint64_t seed) {
  const auto algo = regress::algo_from_string(algo_s);
  const auto listings = read_clean(train);
  const auto fv = eval::encode_all(listings);
  const auto xy = eval::to_xy(fv);
  std::vector<std::string> names(ingest::kFeatureNames.begin(), ingest::kFeatureNames.end());
  const auto model = regress::fit(algo, xy.x, xy.y, seed, names);
  write_text(out, regress::to_json(model).dump() + "\n");
  std::cerr << "trained " << algo_s << " on " << listings.size() << " listings\n";
  return 0;
}

int run_eval(const std::string& data, const std::string& algos_s, const std::string& seeds_s,
             const std::string& out) {
  const auto listings = read_clean(data);
  const auto fv = eval::encode_all(listings);
  std::vector<regress::Algo> algos;
  for (const auto& s : split_csv_list(algos_s)) algos.push_back(regress::algo_from_string(s));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_csv_list(seeds_s)) seeds.push_back(std::stoull(s));
  if (algos.empty() || seeds.empty()) throw UsageError("--algos and --seeds must be non-empty");
  const auto reports = eval::benchmark_all(fv, algos, seeds);
  const bool csv = fs::path(out).extension() == ".csv";
  write_text(out, csv ? eval::render_csv(reports) : eval::render_table(reports));
  if (!out.empty() && out != "-") std::cout << eval::render_table(reports);
  return 0;
}

struct BuildIndexArgs {
  std::string data, out;
  std::uint64_t seed = 0;
  int k = 5, rows = 0, cols = 0, epochs = 0;
};

int run_build_index(const BuildIndexArgs& a) {
  const auto listings = read_clean(a.data);
  std::optional<index::PriceIndexModel> m;
  if (a.rows > 0 || a.cols > 0 || a.epochs > 0) {
    RowMatrix data(static_cast<Eigen::Index>(listings.size()), 3);
    for (std::size_t i = 0; i < listings.size(); ++i)
      data.row(static_cast<Eigen::Index>(i)) << listings[i].lat, listings[i].lng,
          listings[i].gross_rent_chf / listings[i].living_space_m2;
    auto cfg = som::default_config(data, a.seed);
    if (a.rows > 0) cfg.rows = a.rows;
    if (a.cols > 0) cfg.cols = a.cols;
    if (a.epochs > 0) cfg.epochs = a.epochs;
    cfg.sigma_start = std::max(cfg.sigma_end, std::max(cfg.rows, cfg.cols) / 2.0);
    m.emplace(index::build_index(listings, cfg, a.k));
  } else {
    m.emplace(index::build_index(listings, a.seed, a.k));
  }
  write_text(a.out, index::to_json(*m).dump() + "\n");
  std::cerr << "index: " << m->som().config.rows << "x" << m->som().config.cols << " map over "
            << m->samples().size() << " rental listings\n";
  return 0;
}

int run_index(const std::string& model_path, const std::string& buildings_path, const std::string& strategy_s,
              const std::string& out_path, std::uint64_t seed) {
  const auto model = index::price_index_from_json(read_json(model_path));
  auto in = open_in(buildings_path);
  const auto buildings = osm::read_buildings_jsonl(in);
  const auto t0 = std::chrono::steady_clock::now();
  const auto est = index::index_all_buildings(model, buildings, index::strategy_from_string(strategy_s), seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto out = open_out(out_path);
  std::size_t outside = 0;
  for (const auto& e : est) {
    out << index::to_json(e).dump() << '\n';
    outside += !e.in_bbox;
  }
  std::cerr << "indexed " << est.size() << " buildings in " << secs << " s (" << outside
            << " outside the bounding box)\n";
  return 0;
}

struct AnalyzeArgs {
  std::string data, store, from, to, zips, budgets, out;
  double min_rooms = 1, min_space = 1, max_rent = 1e9;
  int zip = 0, bins = 20;
};

std::vector<CleanListing> analyze_source(const AnalyzeArgs& a, const Period& p) {
  if (!a.store.empty()) return store::SnapshotStore(a.store).query_listings(p, {}, OfferKind::Rent);
  if (a.data.empty()) throw UsageError("one of --data or --store is required");
  auto all = read_clean(a.data);
  std::erase_if(all, [](const CleanListing& l) { return l.offer_kind != OfferKind::Rent; });
  return all;
}

analytics::MarketQuery analyze_query(const AnalyzeArgs& a) {
  analytics::MarketQuery q;
  q.min_rooms = a.min_rooms;
  q.min_living_space_m2 = a.min_space;
  q.max_rent_chf = a.max_rent;
  q.period = period_from(a.from, a.to);
  for (const auto& z : split_csv_list(a.zips)) q.zips.insert(std::stoi(z));
  q.check();
  return q;
}

int run_analyze(const std::string& which, const AnalyzeArgs& a) {
  const auto q = analyze_query(a);
  const auto listings = analyze_source(a, q.period);
  json result;
  if (which == "zip-availability") {
    result = analytics::to_json(analytics::zip_availability(listings, q));
  } else if (which == "budget-sweep") {
    std::vector<double> budgets;
    for (const auto& b : split_csv_list(a.budgets)) budgets.push_back(std::stod(b));
    result = analytics::to_json(analytics::budget_sweep(listings, a.zip, a.min_rooms, a.min_space, budgets, q.period));
  } else {
    result = analytics::to_json(analytics::match_histograms(listings, a.zip, q, a.bins));
  }
  write_text(a.out, result.dump(2) + "\n");
  return 0;
}

struct ServeArgs {
  std::string store, index, ui, host = "127.0.0.1", zip_universe;
  std::vector<std::string> models;
  int port = 8080, threads = 8;
};

service::ApiServer* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  service::ServerConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  cfg.threads = a.threads;
  cfg.store_dir = a.store;
  for (const auto& m : a.models) cfg.model_files.insert(service::parse_model_spec(m));
  if (!a.index.empty()) cfg.index_file = a.index;
  if (!a.ui.empty()) cfg.ui_dir = a.ui;
  if (!a.zip_universe.empty())
    for (const auto& z : read_json(a.zip_universe)) cfg.zip_universe.push_back(z.get<int>());
  service::ApiServer server(cfg);
  const int port = server.bind();
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "listening on http://" << a.host << ":" << port << "/api/v1\n";
  server.listen();
  g_server = nullptr;
  return 0;
}

int run_export(const std::string& store_dir, const std::string& from, const std::string& to,
               const std::string& kind_s, const std::string& format, const std::string& out_path) {
  store::SnapshotStore st(store_dir);
  std::optional<OfferKind> kind;
  if (!kind_s.empty()) {
    kind = offer_kind_from_string(kind_s);
    if (!kind) throw UsageError("--kind must be rent or sale");
  }
  const auto fmt = guess_format(out_path, format);
  std::size_t n;
  if (out_path.empty() || out_path == "-") {
    n = st.export_clean(std::cout, period_from(from, to), kind, fmt);
  } else {
    auto out = open_out(out_path);
    n = st.export_clean(out, period_from(from, to), kind, fmt);
  }
  std::cerr << "exported " << n << " listings\n";
  return 0;
}

int run_synth(std::size_t n, std::uint64_t seed, double noise, const std::string& out_path) {
  eval::SyntheticConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.noise_sd_chf = noise;
  cfg.city_centers = eval::default_city_centers();
  const auto ds = eval::generate_synthetic(cfg);
  auto out = open_out(out_path);
  if (fs::path(out_path).extension() == ".csv") ingest::write_csv(out, ds.listings);
  else ingest::write_jsonl(out, ds.listings);
  return 0;
}

int run_planes(const std::string& model_path, const std::string& out_dir) {
  const auto j = read_json(model_path);
  const som::SomModel model =
      j.value("format", "") == "avm.price_index" ? index::price_index_from_json(j).som() : som::som_from_json(j);
  fs::create_directories(out_dir);
  for (const auto& p : som::component_planes(model)) {
    write_text((fs::path(out_dir) / (p.name + ".csv")).string(), som::plane_to_csv(p.denormalized));
    write_text((fs::path(out_dir) / (p.name + ".normalized.csv")).string(), som::plane_to_csv(p.normalized));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Automated rental valuation and market analytics"};
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "Parse, geocode, impute and validate a listing snapshot");
  ingest_cmd->add_option("--in", ia.in, "Input listing file")->required();
  ingest_cmd->add_option("--format", ia.format, "jsonl|csv (default: from extension)");
  ingest_cmd->add_option("--impute-k", ia.impute_k, "Donors for hot-deck imputation (0 = off)");
  ingest_cmd->add_option("--seed", ia.seed, "Imputation seed");
  ingest_cmd->add_option("--out", ia.out, "Clean output (.jsonl or .csv)");
  ingest_cmd->add_option("--rejects", ia.rejects, "Reject reports (JSON Lines)");
  ingest_cmd->add_option("--store", ia.store, "Also append clean listings to this snapshot store");
  ingest_cmd->add_option("--geocode-stub", ia.geocode_stub, "Address table for geocoding");
  ingest_cmd->add_option("--geocode-cache", ia.geocode_cache, "Persistent geocode cache file");
  ingest_cmd->add_option("--geocode-url", ia.geocode_url, "External geocoder base URL");

  std::string osm_in, osm_out;
  auto* osm_cmd = app.add_subcommand("osm", "Extract buildings from an OSM XML file");
  osm_cmd->add_option("--in", osm_in, "OSM XML input")->required();
  osm_cmd->add_option("--out", osm_out, "Buildings (JSON Lines)")->required();

  std::string train_algo, train_in, train_out;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Fit a regression model");
  train_cmd->add_option("--algo", train_algo, "knn|rf|ols|bridge|lp1|lp2|lp3")->required();
  train_cmd->add_option("--train", train_in, "Clean listings")->required();
  train_cmd->add_option("--out", train_out, "Model file")->required();
  train_cmd->add_option("--seed", train_seed, "Seed");

  std::string eval_data, eval_algos = "rf,knn,ols,bridge,lp1,lp2,lp3", eval_seeds = "1,2,3,4,5", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Benchmark regression algorithms with repeated holdout");
  eval_cmd->add_option("--data", eval_data, "Clean listings")->required();
  eval_cmd->add_option("--algos", eval_algos, "Comma-separated algorithms");
  eval_cmd->add_option("--seeds", eval_seeds, "Comma-separated seeds");
  eval_cmd->add_option("--out", eval_out, "report.csv or report.txt (default: stdout)");

  BuildIndexArgs ba;
  auto* build_cmd = app.add_subcommand("build-index", "Train the SOM price index on rental listings");
  build_cmd->add_option("--data", ba.data, "Clean listings")->required();
  build_cmd->add_option("--out", ba.out, "Index model file")->required();
  build_cmd->add_option("--seed", ba.seed, "Seed");
  build_cmd->add_option("--k", ba.k, "Default number of nearest nodes");
  build_cmd->add_option("--rows", ba.rows, "Grid rows (default: heuristic)");
  build_cmd->add_option("--cols", ba.cols, "Grid columns (default: heuristic)");
  build_cmd->add_option("--epochs", ba.epochs, "Training epochs (default 20)");

  std::string ix_model, ix_buildings, ix_strategy = "median", ix_out;
  std::uint64_t ix_seed = 0;
  auto* index_cmd = app.add_subcommand("index", "Estimate the price index of every building");
  index_cmd->add_option("--model", ix_model, "Index model file")->required();
  index_cmd->add_option("--buildings", ix_buildings, "Buildings (JSON Lines)")->required();
  index_cmd->add_option("--strategy", ix_strategy, "median|sample");
  index_cmd->add_option("--seed", ix_seed, "Seed for sample draws");
  index_cmd->add_option("--out", ix_out, "Output (JSON Lines)")->required();

  AnalyzeArgs aa;
  auto* analyze_cmd = app.add_subcommand("analyze", "Market sensitivity queries");
  analyze_cmd->require_subcommand(1);
  auto add_common = [&](CLI::App* c) {
    c->add_option("--data", aa.data, "Clean listings file");
    c->add_option("--store", aa.store, "Snapshot store directory");
    c->add_option("--from", aa.from, "Period start (YYYY-MM-DD)");
    c->add_option("--to", aa.to, "Period end (YYYY-MM-DD)");
    c->add_option("--min-rooms", aa.min_rooms, "Minimum rooms");
    c->add_option("--min-space", aa.min_space, "Minimum living space (m2)");
    c->add_option("--out", aa.out, "Output JSON (default: stdout)");
  };
  auto* za = analyze_cmd->add_subcommand("zip-availability", "Percent of matching listings per zip");
  add_common(za);
  za->add_option("--max-rent", aa.max_rent, "Maximum gross rent (CHF)");
  za->add_option("--zips", aa.zips, "Comma-separated zip filter");
  auto* bs = analyze_cmd->add_subcommand("budget-sweep", "Cumulative match curve over budgets");
  add_common(bs);
  bs->add_option("--zip", aa.zip, "Zip code")->required();
  bs->add_option("--budgets", aa.budgets, "Comma-separated ascending budgets")->required();
  auto* hg = analyze_cmd->add_subcommand("histograms", "Matched vs total distributions for a zip");
  add_common(hg);
  hg->add_option("--zip", aa.zip, "Zip code")->required();
  hg->add_option("--max-rent", aa.max_rent, "Maximum gross rent (CHF)");
  hg->add_option("--bins", aa.bins, "Number of bins");

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP JSON API");
  serve_cmd->add_option("--store", sa.store, "Snapshot store directory")->required();
  serve_cmd->add_option("--model", sa.models, "Regression model as algo=path (repeatable)");
  serve_cmd->add_option("--index", sa.index, "Price index model file");
  serve_cmd->add_option("--ui", sa.ui, "Static UI directory");
  serve_cmd->add_option("--host", sa.host, "Bind address");
  serve_cmd->add_option("--port", sa.port, "Port (0 = any)");
  serve_cmd->add_option("--threads", sa.threads, "Worker threads");
  serve_cmd->add_option("--zip-universe", sa.zip_universe, "JSON array of zips reported as no data when absent");

  std::string ex_store, ex_from, ex_to, ex_kind, ex_format, ex_out;
  auto* export_cmd = app.add_subcommand("export", "Export the latest listings from a snapshot store");
  export_cmd->add_option("--store", ex_store, "Snapshot store directory")->required();
  export_cmd->add_option("--from", ex_from, "Period start");
  export_cmd->add_option("--to", ex_to, "Period end");
  export_cmd->add_option("--kind", ex_kind, "rent|sale (default: both)");
  export_cmd->add_option("--format", ex_format, "jsonl|csv (default: from extension)");
  export_cmd->add_option("--out", ex_out, "Output file (default: stdout)");

  std::size_t syn_n = 5000;
  std::uint64_t syn_seed = 1;
  double syn_noise = 150;
  std::string syn_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic listing set with known ground truth");
  synth_cmd->add_option("--n", syn_n, "Number of listings");
  synth_cmd->add_option("--seed", syn_seed, "Seed");
  synth_cmd->add_option("--noise", syn_noise, "Rent noise sd (CHF)");
  synth_cmd->add_option("--out", syn_out, "Output (.jsonl or .csv)")->required();

  std::size_t so_n = 1000;
  std::uint64_t so_seed = 1;
  std::string so_out;
  auto* synth_osm_cmd = app.add_subcommand("synth-osm", "Write a synthetic OSM XML extract");
  synth_osm_cmd->add_option("--buildings", so_n, "Number of buildings");
  synth_osm_cmd->add_option("--seed", so_seed, "Seed");
  synth_osm_cmd->add_option("--out", so_out, "Output .osm")->required();

  std::string pl_model, pl_out;
  auto* planes_cmd = app.add_subcommand("planes", "Export SOM component planes as CSV grids");
  planes_cmd->add_option("--model", pl_model, "SOM or index model file")->required();
  planes_cmd->add_option("--out-dir", pl_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) return run_ingest(ia);
    if (*osm_cmd) return run_osm(osm_in, osm_out);
    if (*train_cmd) return run_train(train_algo, train_in, train_out, train_seed);
    if (*eval_cmd) return run_eval(eval_data, eval_algos, eval_seeds, eval_out);
    if (*build_cmd) return run_build_index(ba);
    if (*index_cmd) return run_index(ix_model, ix_buildings, ix_strategy, ix_out, ix_seed);
    if (*analyze_cmd) {
      if (*za) return run_analyze("zip-availability", aa);
      if (*bs) return run_analyze("budget-sweep", aa);
      return run_analyze("histograms", aa);
    }
    if (*serve_cmd) return run_serve(sa);
    if (*export_cmd) return run_export(ex_store, ex_from, ex_to, ex_kind, ex_format, ex_out);
    if (*synth_cmd) return run_synth(syn_n, syn_seed, syn_noise, syn_out);
    if (*synth_osm_cmd) {
      auto out = open_out(so_out);
      osm::write_synthetic_extract(out, so_n, so_seed);
      return 0;
    }
    if (*planes_cmd) return run_planes(pl_model, pl_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
