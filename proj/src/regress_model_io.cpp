#include <chrono>
#include <ctime>

#include "avm/ingest.hpp"
#include "avm/regress.hpp"

namespace avm::regress {

using nlohmann::json;

std::string_view to_string(Algo a) {
  switch (a) {
    case Algo::Knn: return "knn";
    case Algo::Rf: return "rf";
    case Algo::Ols: return "ols";
    case Algo::Bridge: return "bridge";
    case Algo::Lp1: return "lp1";
    case Algo::Lp2: return "lp2";
    case Algo::Lp3: return "lp3";
  }
  return "knn";
}

Algo algo_from_string(std::string_view s) {
  for (Algo a : all_algos())
    if (to_string(a) == s) return a;
  throw UsageError("unknown algorithm '" + std::string(s) + "' (expected knn|rf|ols|bridge|lp1|lp2|lp3)");
}

std::vector<Algo> all_algos() {
  return {Algo::Rf, Algo::Knn, Algo::Bridge, Algo::Ols, Algo::Lp1, Algo::Lp2, Algo::Lp3};
}

namespace {

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool standard_layout(const std::vector<std::string>& names) {
  if (names.size() != ingest::kFeatureCount) return false;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] != ingest::kFeatureNames[i]) return false;
  return true;
}

json matrix_json(const RowMatrix& m) {
  return json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

RowMatrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ConfigError("matrix payload size mismatch");
  return Eigen::Map<const RowMatrix>(data.data(), rows, cols);
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

json scaler_json(const StandardScaler& s) {
  return json{{"mean", s.mean}, {"stddev", s.stddev}, {"constant", s.constant}};
}

StandardScaler scaler_from(const json& j) {
  StandardScaler s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.constant = j.at("constant").get<std::vector<bool>>();
  return s;
}

std::string_view max_features_name(MaxFeatures m) {
  return m == MaxFeatures::All ? "all" : m == MaxFeatures::Sqrt ? "sqrt" : "third";
}

MaxFeatures max_features_from(const std::string& s) {
  if (s == "all") return MaxFeatures::All;
  if (s == "sqrt") return MaxFeatures::Sqrt;
  if (s == "third") return MaxFeatures::Third;
  throw ConfigError("unknown max_features '" + s + "'");
}

json payload_json(const Model& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, KnnModel>) {
          return json{{"k", m.k}, {"scaler", scaler_json(m.scaler)}, {"train_x", matrix_json(m.train_x)},
                      {"train_y", vector_json(m.train_y)}};
        } else if constexpr (std::is_same_v<T, ForestModel>) {
          json trees = json::array();
          for (auto& t : m.trees) {
            json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
                 value = json::array(), count = json::array();
            for (auto& n : t.nodes) {
              feature.push_back(n.feature);
              threshold.push_back(n.threshold);
              left.push_back(n.left);
              right.push_back(n.right);
              value.push_back(n.value);
              count.push_back(n.n_samples);
            }
            trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right},
                             {"value", value}, {"n_samples", count}});
          }
          return json{{"n_trees", m.options.n_trees},
                      {"seed", m.options.seed},
                      {"min_samples_leaf", m.options.min_samples_leaf},
                      {"max_features", max_features_name(m.options.max_features)},
                      {"bootstrap", m.options.bootstrap},
                      {"n_features", m.n_features},
                      {"trees", trees}};
        } else if constexpr (std::is_same_v<T, LinearModel>) {
          json j{{"weights", m.weights},
                 {"fit_kind", m.kind == LinearKind::Ols ? "ols" : "bayesian_ridge"},
                 {"rank_deficient", m.rank_deficient},
                 {"converged", m.converged},
                 {"iterations", m.iterations}};
          if (m.alpha) j["alpha"] = *m.alpha;
          if (m.beta) j["beta"] = *m.beta;
          return j;
        } else {
          return json{{"order", m.options.order},
                      {"ridge_jitter", m.options.ridge_jitter},
                      {"linear_only", m.options.linear_only},
                      {"support_factor", m.options.support_factor},
                      {"scaler", scaler_json(m.scaler)},
                      {"train_x", matrix_json(m.train_x)},
                      {"train_y", vector_json(m.train_y)}};
        }
      },
      model);
}

Model payload_from(Algo algo, const json& p) {
  switch (algo) {
    case Algo::Knn: {
      KnnModel m;
      m.k = p.at("k");
      m.scaler = scaler_from(p.at("scaler"));
      m.train_x = matrix_from(p.at("train_x"));
      m.train_y = vector_from(p.at("train_y"));
      return m;
    }
    case Algo::Rf: {
      ForestModel m;
      m.options.n_trees = p.at("n_trees");
      m.options.seed = p.at("seed");
      m.options.min_samples_leaf = p.at("min_samples_leaf");
      m.options.max_features = max_features_from(p.at("max_features"));
      m.options.bootstrap = p.at("bootstrap");
      m.n_features = p.at("n_features");
      for (auto& t : p.at("trees")) {
        RegressionTree tree;
        const auto& f = t.at("feature");
        tree.nodes.resize(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) {
          auto& n = tree.nodes[i];
          n.feature = f[i];
          n.threshold = t.at("threshold")[i];
          n.left = t.at("left")[i];
          n.right = t.at("right")[i];
          n.value = t.at("value")[i];
          n.n_samples = t.at("n_samples")[i];
        }
        m.trees.push_back(std::move(tree));
      }
      return m;
    }
    case Algo::Ols:
    case Algo::Bridge: {
      LinearModel m;
      m.weights = p.at("weights").get<std::vector<double>>();
      m.kind = p.at("fit_kind") == "ols" ? LinearKind::Ols : LinearKind::BayesianRidge;
      m.rank_deficient = p.value("rank_deficient", false);
      m.converged = p.value("converged", true);
      m.iterations = p.value("iterations", 0);
      if (p.contains("alpha")) m.alpha = p.at("alpha").get<double>();
      if (p.contains("beta")) m.beta = p.at("beta").get<double>();
      return m;
    }
    default: {
      LocalPolyModel m;
      m.options.order = p.at("order");
      m.options.ridge_jitter = p.at("ridge_jitter");
      m.options.linear_only = p.at("linear_only").get<std::vector<std::size_t>>();
      m.options.support_factor = p.at("support_factor");
      m.scaler = scaler_from(p.at("scaler"));
      m.train_x = matrix_from(p.at("train_x"));
      m.train_y = vector_from(p.at("train_y"));
      return m;
    }
  }
}

}  // namespace

double FittedModel::predict(std::span<const double> x) const {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, KnnModel>) return predict_knn(m, x);
        else if constexpr (std::is_same_v<T, ForestModel>) return predict_forest(m, x);
        else if constexpr (std::is_same_v<T, LinearModel>) return predict_linear(m, x);
        else return predict_local_poly(m, x);
      },
      model);
}

Vector FittedModel::predict(const RowMatrix& x) const {
  if (auto* knn = std::get_if<KnnModel>(&model)) return predict_knn(*knn, x);
  Vector out(x.rows());
  const auto n = static_cast<std::ptrdiff_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    out(i) = predict(std::span<const double>(x.data() + static_cast<std::size_t>(i) * d, d));
  return out;
}

FittedModel fit(Algo algo, const RowMatrix& x, const Vector& y, std::uint64_t seed,
                std::vector<std::string> feature_names) {
  FittedModel fm;
  fm.algo = algo;
  fm.created_at = now_iso();
  fm.feature_names = std::move(feature_names);
  switch (algo) {
    case Algo::Knn:
      fm.model = fit_knn(x, y, 9);
      fm.metadata = {{"k", 9}, {"scaling", "zscore"}};
      break;
    case Algo::Rf: {
      ForestOptions o;
      o.seed = seed;
      fm.model = fit_random_forest(x, y, o);
      fm.metadata = {{"n_trees", o.n_trees}, {"max_features", "all"}, {"min_samples_leaf", 1},
                     {"max_depth", nullptr}, {"bootstrap", true}, {"seed", seed}};
      break;
    }
    case Algo::Ols:
      fm.model = fit_ols(x, y);
      fm.metadata = {{"solver", "complete_orthogonal_decomposition"}};
      break;
    case Algo::Bridge: {
      BayesianRidgeOptions o;
      fm.model = fit_bayesian_ridge(x, y, o);
      fm.metadata = {{"max_iter", o.max_iter}, {"tol", o.tol}, {"alpha_init", 1.0}, {"beta_init", "1/var(y)"}};
      break;
    }
    case Algo::Lp1:
    case Algo::Lp2:
    case Algo::Lp3: {
      LocalPolyOptions o;
      o.order = algo == Algo::Lp1 ? 1 : algo == Algo::Lp2 ? 2 : 3;
      if (standard_layout(fm.feature_names)) o.linear_only = {0, 1, 2, 3};
      fm.model = fit_local_poly(x, y, o);
      fm.metadata = {{"order", o.order}, {"kernel", "gaussian"}, {"bandwidth", "adaptive_pilot_knn"},
                     {"ridge_jitter", o.ridge_jitter}};
      break;
    }
  }
  return fm;
}

json to_json(const FittedModel& m) {
  return json{{"format", "avm.model"},
              {"version", 1},
              {"kind", to_string(m.algo)},
              {"created_at", m.created_at},
              {"feature_names", m.feature_names},
              {"metadata", m.metadata},
              {"payload", payload_json(m.model)}};
}

FittedModel model_from_json(const json& j) {
  if (j.value("format", "") != "avm.model") throw ConfigError("not an avm.model document");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported avm.model version");
  FittedModel m;
  m.algo = algo_from_string(j.at("kind").get<std::string>());
  m.created_at = j.value("created_at", "");
  m.feature_names = j.value("feature_names", std::vector<std::string>{});
  m.metadata = j.value("metadata", json::object());
  m.model = payload_from(m.algo, j.at("payload"));
  return m;
}

}  // namespace avm::regress
