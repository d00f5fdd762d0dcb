#include "avm/server.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "avm/analytics.hpp"

namespace avm::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " file not found: " + p.string());
  std::ifstream in(p);
  if (!in) throw IoError(std::string("cannot open ") + what + " file: " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string(what) + " file " + p.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<std::string> split_messages(const std::string& what) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= what.size()) {
    const auto pos = what.find("; ", start);
    out.push_back(what.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 2;
  }
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& what) {
  send_json(res, status, json{{"error", what}, {"errors", split_messages(what)}});
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

// Maps the library's error kinds onto HTTP status codes.
Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const NotFound& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const Unavailable& e) {
      send_error(res, 503, e.what());
    } catch (const DomainError& e) {
      send_error(res, 400, e.what());
    } catch (const UsageError& e) {
      send_error(res, 400, e.what());
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what());
    } catch (const ContractViolation& e) {
      send_error(res, 400, e.what());
    } catch (const InsufficientData& e) {
      send_error(res, 400, e.what());
    } catch (const EmptyData& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

/// Collects field-level problems while reading query parameters.
class Params {
 public:
  explicit Params(const httplib::Request& req) : req_(req) {}

  std::optional<std::string> text(const char* key, bool required) {
    if (!req_.has_param(key)) {
      if (required) errors.push_back(std::string(key) + ": missing");
      return std::nullopt;
    }
    return req_.get_param_value(key);
  }

  template <class T>
  std::optional<T> number(const char* key, bool required) {
    auto s = text(key, required);
    if (!s) return std::nullopt;
    T v{};
    const char* b = s->data();
    const char* e = b + s->size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || s->empty()) {
      errors.push_back(std::string(key) + ": not a valid " + (std::is_integral_v<T> ? "integer" : "number"));
      return std::nullopt;
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(v)) {
        errors.push_back(std::string(key) + ": must be finite");
        return std::nullopt;
      }
    }
    return v;
  }

  void throw_if_any() const {
    if (errors.empty()) return;
    std::string msg;
    for (const auto& e : errors) msg += (msg.empty() ? "" : "; ") + e;
    throw DomainError(msg);
  }

  std::vector<std::string> errors;

 private:
  const httplib::Request& req_;
};

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    throw DomainError("body: invalid JSON");
  }
}

Date today_utc() { return Date::parse_or_throw(store::utc_timestamp().substr(0, 10)); }

const Period kAllTime{{1900, 1, 1}, {2999, 12, 31}};

// Buffers writes and forwards them to an httplib sink in chunks.
class SinkBuf : public std::streambuf {
 public:
  explicit SinkBuf(httplib::DataSink& sink) : sink_(sink) { setp(buf_, buf_ + sizeof buf_); }
  ~SinkBuf() override { sync(); }

 protected:
  int_type overflow(int_type ch) override {
    if (sync() != 0) return traits_type::eof();
    if (!traits_type::eq_int_type(ch, traits_type::eof())) {
      *pptr() = traits_type::to_char_type(ch);
      pbump(1);
    }
    return traits_type::not_eof(ch);
  }
  int sync() override {
    const auto n = static_cast<std::size_t>(pptr() - pbase());
    if (n > 0 && !sink_.write(pbase(), n)) return -1;
    setp(buf_, buf_ + sizeof buf_);
    return 0;
  }

 private:
  httplib::DataSink& sink_;
  char buf_[1 << 16];
};

}  // namespace

std::pair<regress::Algo, fs::path> parse_model_spec(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw UsageError("model spec must be <algo>=<path>, got '" + spec + "'");
  return {regress::algo_from_string(spec.substr(0, eq)), fs::path(spec.substr(eq + 1))};
}

std::shared_ptr<const ModelSet> load_models(const ServerConfig& config, std::uint64_t version) {
  auto set = std::make_shared<ModelSet>();
  set->version = version;
  for (const auto& [algo, path] : config.model_files) {
    auto m = regress::model_from_json(read_json_file(path, "model"));
    if (m.algo != algo)
      throw IoError("model file " + path.string() + " holds '" + std::string(regress::to_string(m.algo)) +
                    "', expected '" + std::string(regress::to_string(algo)) + "'");
    set->models.emplace(algo, std::move(m));
  }
  if (config.index_file)
    set->index = std::make_shared<const index::PriceIndexModel>(
        index::price_index_from_json(read_json_file(*config.index_file, "index model")));
  return set;
}

ModelRegistry::ModelRegistry(ServerConfig config) : config_(std::move(config)) { current_ = load_models(config_, 1); }

std::shared_ptr<const ModelSet> ModelRegistry::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

std::uint64_t ModelRegistry::reload() {
  std::lock_guard reload_lock(reload_mu_);
  const std::uint64_t next = current()->version + 1;
  auto fresh = load_models(config_, next);
  std::lock_guard lock(mu_);
  current_ = std::move(fresh);
  return next;
}

ApiServer::ApiServer(ServerConfig config)
    : config_(std::move(config)),
      registry_(std::make_unique<ModelRegistry>(config_)),
      store_(std::make_shared<store::SnapshotStore>(config_.store_dir)),
      http_(std::make_unique<httplib::Server>()) {
  const int threads = std::max(1, config_.threads);
  http_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  install_routes();
  if (config_.ui_dir && !http_->set_mount_point("/", config_.ui_dir->string()))
    throw IoError("ui directory not found: " + config_.ui_dir->string());
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind() {
  int port = config_.port;
  if (port == 0) {
    port = http_->bind_to_any_port(config_.host);
    if (port < 0) throw IoError("cannot bind " + config_.host);
  } else if (!http_->bind_to_port(config_.host, port)) {
    throw IoError("cannot bind " + config_.host + ":" + std::to_string(port));
  }
  return port;
}

void ApiServer::listen() { http_->listen_after_bind(); }
void ApiServer::stop() {
  if (http_) http_->stop();
}
void ApiServer::wait_until_ready() const { http_->wait_until_ready(); }

void ApiServer::install_routes() {
  auto& srv = *http_;
  const std::string api = "/api/v1";

  srv.Get(api + "/healthz", guarded([this](const httplib::Request&, httplib::Response& res) {
            auto set = registry_->current();
            json models = json::array();
            for (const auto& [a, m] : set->models) models.push_back(regress::to_string(a));
            send_json(res, 200,
                      {{"status", "ok"},
                       {"model_version", set->version},
                       {"models", models},
                       {"index_loaded", static_cast<bool>(set->index)}});
          }));

  srv.Get(api + "/estimate", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto set = registry_->current();
            Params p(req);
            auto type = p.text("type", true);
            auto rooms = p.number<double>("rooms", true);
            auto floor = p.number<int>("floor", true);
            auto space = p.number<double>("space", true);
            auto year = p.number<int>("year", true);
            auto zip = p.number<int>("zip", true);
            auto lng = p.number<double>("lng", true);
            auto lat = p.number<double>("lat", true);
            auto model_name = p.text("model", false);

            std::optional<regress::Algo> algo;
            if (model_name) {
              try {
                algo = regress::algo_from_string(*model_name);
              } catch (const UsageError&) {
                p.errors.push_back("model: expected rf|knn|ols|bridge|lp1|lp2|lp3");
              }
            }
            p.throw_if_any();

            RawListing raw;
            raw.listing_id = "query";
            raw.snapshot_date = today_utc();
            raw.property_type = PropertyTypeValue::parse(*type);
            raw.rooms = rooms;
            raw.floor = floor;
            raw.living_space_m2 = space;
            raw.year_built = year;
            raw.zip = zip;
            raw.lng = lng;
            raw.lat = lat;
            raw.gross_rent_chf = 1000;  // placeholder target; not used for prediction
            auto v = ingest::validate(raw);
            if (auto* rej = std::get_if<ingest::RejectReport>(&v)) {
              std::string msg;
              for (const auto& r : rej->failed_rules) msg += (msg.empty() ? "" : "; ") + r;
              throw DomainError(msg);
            }

            if (!algo) {
              if (set->models.empty()) throw Unavailable("no regression model loaded");
              algo = set->models.count(regress::Algo::Rf) ? regress::Algo::Rf : set->models.begin()->first;
            }
            auto it = set->models.find(*algo);
            if (it == set->models.end())
              throw NotFound("model: '" + std::string(regress::to_string(*algo)) + "' is not loaded");

            const auto fv = ingest::encode_features(std::get<CleanListing>(v));
            const double est = it->second.predict(fv.values);
            send_json(res, 200,
                      {{"estimate_chf", est}, {"model", regress::to_string(*algo)}, {"model_version", set->version}});
          }));

  srv.Get(api + "/index", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto set = registry_->current();
            Params p(req);
            auto lat = p.number<double>("lat", true);
            auto lng = p.number<double>("lng", true);
            auto k = p.number<int>("k", false);
            auto strategy_s = p.text("strategy", false);
            auto seed = p.number<std::uint64_t>("seed", false);
            index::Strategy strategy = index::Strategy::NodeMedian;
            if (strategy_s) {
              try {
                strategy = index::strategy_from_string(*strategy_s);
              } catch (const UsageError&) {
                p.errors.push_back("strategy: expected median|sample");
              }
            }
            if (k && *k < 1) p.errors.push_back("k: must be >= 1");
            if (strategy == index::Strategy::SampleDraw && !seed && !req.has_param("seed"))
              p.errors.push_back("seed: required for strategy=sample");
            p.throw_if_any();
            if (!set->index) throw Unavailable("no price index model loaded");

            const int kk = k ? *k : set->index->k_default();
            const auto e = index::estimate_index(*set->index, *lat, *lng, kk, strategy, seed.value_or(0));
            const ingest::CleanBounds bounds;
            send_json(res, 200,
                      {{"price_per_m2", e.price_per_m2},
                       {"n_support", e.n_support},
                       {"k_used", e.k_used},
                       {"strategy", index::to_string(e.strategy)},
                       {"in_bbox", bounds.in_swiss_bbox(*lat, *lng)},
                       {"model_version", set->version}});
          }));

  srv.Post(api + "/analytics/zip-availability",
           guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const json& qj = body.contains("query") ? body.at("query") : body;
             const auto q = analytics::query_from_json(qj);
             std::vector<int> universe = config_.zip_universe;
             if (body.contains("universe")) {
               if (!body.at("universe").is_array()) throw DomainError("universe: expected array of integers");
               universe.clear();
               for (const auto& z : body.at("universe")) {
                 if (!z.is_number_integer()) throw DomainError("universe: expected array of integers");
                 universe.push_back(z.get<int>());
               }
             }
             const auto listings = store_->query_listings(q.period, {}, OfferKind::Rent);
             send_json(res, 200, analytics::to_json(analytics::zip_availability(listings, q, universe)));
           }));

  srv.Post(api + "/analytics/budget-sweep", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.is_object()) throw DomainError("body: expected JSON object");
             std::vector<std::string> errs;
             auto num = [&](const char* key) -> double {
               if (!body.contains(key)) {
                 errs.push_back(std::string(key) + ": missing");
                 return 0;
               }
               if (!body.at(key).is_number()) {
                 errs.push_back(std::string(key) + ": expected number");
                 return 0;
               }
               return body.at(key).get<double>();
             };
             int zip = 0;
             if (!body.contains("zip")) errs.push_back("zip: missing");
             else if (!body.at("zip").is_number_integer()) errs.push_back("zip: expected integer");
             else zip = body.at("zip").get<int>();
             const double min_rooms = num("min_rooms");
             const double min_space = num("min_space");
             std::vector<double> budgets;
             if (!body.contains("budgets") || !body.at("budgets").is_array()) {
               errs.push_back("budgets: expected array of numbers");
             } else {
               for (const auto& b : body.at("budgets")) {
                 if (!b.is_number()) {
                   errs.push_back("budgets: expected array of numbers");
                   break;
                 }
                 budgets.push_back(b.get<double>());
               }
             }
             Period period = kAllTime;
             if (body.contains("period")) {
               try {
                 period = analytics::query_from_json(json{{"period", body.at("period")}}).period;
               } catch (const DomainError& e) {
                 errs.push_back(e.what());
               }
             }
             if (!errs.empty()) {
               std::string msg;
               for (const auto& e : errs) msg += (msg.empty() ? "" : "; ") + e;
               throw DomainError(msg);
             }
             const auto listings = store_->query_listings(period, {zip}, OfferKind::Rent);
             send_json(res, 200,
                       analytics::to_json(analytics::budget_sweep(listings, zip, min_rooms, min_space, budgets, period)));
           }));

  srv.Post(api + "/analytics/histograms", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.is_object()) throw DomainError("body: expected JSON object");
             if (!body.contains("zip") || !body.at("zip").is_number_integer())
               throw DomainError("zip: expected integer");
             const int zip = body.at("zip").get<int>();
             int n_bins = 20;
             if (body.contains("n_bins")) {
               if (!body.at("n_bins").is_number_integer()) throw DomainError("n_bins: expected integer");
               n_bins = body.at("n_bins").get<int>();
             }
             const auto q = analytics::query_from_json(body.contains("query") ? body.at("query") : json::object());
             const auto listings = store_->query_listings(q.period, {zip}, OfferKind::Rent);
             send_json(res, 200, analytics::to_json(analytics::match_histograms(listings, zip, q, n_bins)));
           }));

  srv.Get(api + "/listings/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
            Params p(req);
            Period period = kAllTime;
            for (auto [key, slot] : {std::pair{"from", &period.start}, std::pair{"to", &period.end}}) {
              if (auto s = p.text(key, false)) {
                if (auto d = Date::parse(*s)) *slot = *d;
                else p.errors.push_back(std::string(key) + ": expected ISO date");
              }
            }
            std::optional<OfferKind> kind;
            if (auto s = p.text("kind", false)) {
              kind = offer_kind_from_string(*s);
              if (!kind) p.errors.push_back("kind: expected rent|sale");
            }
            ingest::Format format = ingest::Format::JsonLines;
            if (auto s = p.text("format", false)) {
              try {
                format = ingest::format_from_string(*s);
              } catch (const UsageError&) {
                p.errors.push_back("format: expected jsonl|csv");
              }
            }
            if (period.end < period.start) p.errors.push_back("period: from after to");
            p.throw_if_any();

            const bool csv = format == ingest::Format::Csv;
            res.set_header("Content-Disposition", csv ? "attachment; filename=\"listings.csv\""
                                                      : "attachment; filename=\"listings.jsonl\"");
            auto store = store_;
            res.set_chunked_content_provider(
                csv ? "text/csv" : "application/x-ndjson",
                [store, period, kind, format](std::size_t, httplib::DataSink& sink) {
                  {
                    SinkBuf buf(sink);
                    std::ostream os(&buf);
                    store->export_clean(os, period, kind, format);
                  }
                  sink.done();
                  return true;
                });
          }));

  srv.Post(api + "/feedback", guarded([this](const httplib::Request& req, httplib::Response& res) {
             auto f = store::feedback_from_json(parse_body(req));
             if (f.timestamp.empty()) f.timestamp = store::utc_timestamp();
             store_->append_feedback(f);
             send_json(res, 201, store::to_json(f));
           }));

  srv.Get(api + "/feedback", guarded([this](const httplib::Request&, httplib::Response& res) {
            json arr = json::array();
            for (const auto& f : store_->feedback_log()) arr.push_back(store::to_json(f));
            send_json(res, 200, arr);
          }));

  srv.Post(api + "/admin/reload", guarded([this](const httplib::Request&, httplib::Response& res) {
             const auto v = registry_->reload();
             send_json(res, 200, {{"status", "reloaded"}, {"model_version", v}});
           }));
}

}  // namespace avm::service
