#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "avm/regress.hpp"
#include "avm/spatial_index.hpp"
#include "avm/store.hpp"

namespace httplib {
class Server;
}

namespace avm::service {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_dir;
  /// Regression model files by algorithm.
  std::map<regress::Algo, std::filesystem::path> model_files;
  std::optional<std::filesystem::path> index_file;
  std::optional<std::filesystem::path> ui_dir;
  /// Zips reported as no data when absent from the store.
  std::vector<int> zip_universe;
  int threads = 8;
};

/// One consistent generation of loaded models.
struct ModelSet {
  std::uint64_t version = 0;
  std::map<regress::Algo, regress::FittedModel> models;
  std::shared_ptr<const index::PriceIndexModel> index;
};

/// Loads every configured file. Throws IoError naming the path when a file
/// is missing or unreadable.
std::shared_ptr<const ModelSet> load_models(const ServerConfig& config, std::uint64_t version);

/// Holds the live ModelSet. Readers take a reference-counted snapshot and
/// keep it for the whole request; reload builds the next set off to the
/// side and swaps the pointer, so no request ever sees a partial set.
class ModelRegistry {
 public:
  explicit ModelRegistry(ServerConfig config);

  std::shared_ptr<const ModelSet> current() const;
  /// Loads a fresh generation and publishes it. On failure the current set
  /// stays live and the error propagates.
  std::uint64_t reload();

 private:
  ServerConfig config_;
  mutable std::mutex mu_;
  std::mutex reload_mu_;  // serializes reloads
  std::shared_ptr<const ModelSet> current_;
};

/// The /api/v1 HTTP front end.
class ApiServer {
 public:
  explicit ApiServer(ServerConfig config);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds config.host:config.port (port 0 = ephemeral). Returns the bound port.
  int bind();
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  /// Blocks until the server accepts connections.
  void wait_until_ready() const;

  ModelRegistry& registry() { return *registry_; }
  store::SnapshotStore& store() { return *store_; }

 private:
  void install_routes();

  ServerConfig config_;
  std::unique_ptr<ModelRegistry> registry_;
  std::shared_ptr<store::SnapshotStore> store_;
  std::unique_ptr<httplib::Server> http_;
};

/// Parses "rf=/path/model.json" into (algo, path); throws UsageError.
std::pair<regress::Algo, std::filesystem::path> parse_model_spec(const std::string& spec);

}  // namespace avm::service
