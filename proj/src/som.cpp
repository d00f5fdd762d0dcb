#include "avm/som.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "avm/kernels.hpp"

namespace avm::som {

using nlohmann::json;

void SomConfig::check() const {
  if (rows < 1 || cols < 1) throw ConfigError("som: rows and cols must be positive");
  if (rows * cols < 4) throw ConfigError("som: rows*cols must be >= 4");
  if (epochs < 1) throw ConfigError("som: epochs must be positive");
  if (!(sigma_end >= 0.1)) throw ConfigError("som: sigma_end must be >= 0.1");
  if (!(sigma_start >= sigma_end)) throw ConfigError("som: sigma_start must be >= sigma_end");
}

namespace {

std::vector<std::size_t> all_dims(std::size_t d) {
  std::vector<std::size_t> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = i;
  return v;
}

kernels::RowsView view(const RowMatrix& m) {
  return {m.data(), static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

NormStats compute_stats(const RowMatrix& data) {
  const auto n = static_cast<double>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  NormStats s;
  s.mean.resize(d);
  s.stddev.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    const auto col = data.col(static_cast<Eigen::Index>(k));
    const double m = col.mean();
    const double var = (col.array() - m).square().sum() / n;
    s.mean[k] = m;
    s.stddev[k] = std::sqrt(var);
  }
  return s;
}

void check_stats(NormStats& s, std::size_t n, const std::vector<std::string>& names, bool strict) {
  for (std::size_t k = 0; k < s.mean.size(); ++k) {
    if (n == 1) {
      // A single point has no spread in any column; identity scaling keeps it representable.
      s.stddev[k] = 1.0;
      continue;
    }
    if (!(s.stddev[k] > 1e-12 * std::max(1.0, std::abs(s.mean[k])))) {
      if (!strict) {
        s.stddev[k] = 1.0;
        continue;
      }
      const std::string name = k < names.size() ? names[k] : "dim " + std::to_string(k);
      throw ConfigError("som: constant column '" + name + "'");
    }
  }
}

// Leading eigenpairs of the covariance of normalized data; sign fixed so the
// largest-magnitude component is positive.
void principal_axes(const RowMatrix& z, Eigen::VectorXd& e1, double& l1, Eigen::VectorXd& e2, double& l2) {
  const auto d = z.cols();
  const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(z.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  auto fix_sign = [](Eigen::VectorXd v) {
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    return v;
  };
  e1 = fix_sign(es.eigenvectors().col(d - 1));
  l1 = std::max(0.0, es.eigenvalues()(d - 1));
  if (d >= 2) {
    e2 = fix_sign(es.eigenvectors().col(d - 2));
    l2 = std::max(0.0, es.eigenvalues()(d - 2));
    if (l1 > 0 && l2 > 0.9 * l1) {
      // Near-equal variances leave the in-plane rotation arbitrary; pin e1 to
      // the feature axis with the largest projection onto the plane.
      Eigen::Index axis = 0;
      (e1.array().square() + e2.array().square()).maxCoeff(&axis);
      Eigen::VectorXd p = e1(axis) * e1 + e2(axis) * e2;
      p.normalize();
      Eigen::VectorXd q = e1 + e2 - (e1 + e2).dot(p) * p;
      if (q.norm() < 1e-12) q = e1 - e1.dot(p) * p;
      e1 = fix_sign(p);
      e2 = fix_sign(q.normalized());
    }
  } else {
    e2 = Eigen::VectorXd::Zero(d);
    l2 = 0;
  }
}

RowMatrix init_codebook(const RowMatrix& z, const SomConfig& cfg) {
  const auto d = z.cols();
  const auto rows = static_cast<std::size_t>(cfg.rows), cols = static_cast<std::size_t>(cfg.cols);
  RowMatrix cb(static_cast<Eigen::Index>(rows * cols), d);
  if (cfg.init == InitKind::RandomUniform) {
    Rng rng(cfg.seed);
    const Eigen::RowVectorXd lo = z.colwise().minCoeff(), hi = z.colwise().maxCoeff();
    for (Eigen::Index u = 0; u < cb.rows(); ++u)
      for (Eigen::Index k = 0; k < d; ++k) cb(u, k) = rng.uniform(lo(k), hi(k));
    return cb;
  }
  Eigen::VectorXd e1, e2;
  double l1 = 0, l2 = 0;
  if (z.rows() >= 2) principal_axes(z, e1, l1, e2, l2);
  else e1 = e2 = Eigen::VectorXd::Zero(d);
  const Eigen::VectorXd a1 = e1 * std::sqrt(l1), a2 = e2 * std::sqrt(l2);
  // The longer grid side follows the first principal axis.
  const bool cols_major = cols >= rows;
  auto coord = [](std::size_t i, std::size_t n) {
    return n <= 1 ? 0.0 : -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  const Eigen::RowVectorXd mean = z.colwise().mean();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double t1 = cols_major ? coord(c, cols) : coord(r, rows);
      const double t2 = cols_major ? coord(r, rows) : coord(c, cols);
      cb.row(static_cast<Eigen::Index>(r * cols + c)) = mean + (t1 * a1 + t2 * a2).transpose();
    }
  }
  return cb;
}

SomModel prepare(const RowMatrix& data, const SomConfig& config, std::vector<std::string> names,
                 RowMatrix& z_out, bool strict = true) {
  config.check();
  if (data.rows() == 0) throw EmptyData("som: no training rows");
  if (data.cols() == 0) throw ConfigError("som: zero-dimensional data");
  if (!data.allFinite()) throw ConfigError("som: non-finite training value");
  if (!names.empty() && names.size() != static_cast<std::size_t>(data.cols()))
    throw ConfigError("som: feature_names size does not match data width");
  if (names.empty())
    for (Eigen::Index k = 0; k < data.cols(); ++k) names.push_back("x" + std::to_string(k));
  if (data.rows() < config.nodes())
    std::cerr << "warning: som: " << data.rows() << " rows for " << config.nodes() << " nodes\n";

  SomModel m;
  m.config = config;
  m.feature_names = std::move(names);
  m.norm = compute_stats(data);
  check_stats(m.norm, static_cast<std::size_t>(data.rows()), m.feature_names, strict);
  z_out = m.normalize(data);
  m.codebook = init_codebook(z_out, config);
  return m;
}

}  // namespace

SomConfig default_config(const RowMatrix& data, std::uint64_t seed) {
  SomConfig cfg;
  cfg.seed = seed;
  const double n = std::max<double>(1.0, static_cast<double>(data.rows()));
  const double units = std::ceil(5.0 * std::sqrt(n));
  double aspect = 1.0;
  if (data.rows() >= 2 && data.cols() >= 2) {
    NormStats s = compute_stats(data);
    RowMatrix z = data;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const double sd = s.stddev[static_cast<std::size_t>(k)] > 0 ? s.stddev[static_cast<std::size_t>(k)] : 1.0;
      z.col(k) = (z.col(k).array() - s.mean[static_cast<std::size_t>(k)]) / sd;
    }
    Eigen::VectorXd e1, e2;
    double l1 = 0, l2 = 0;
    principal_axes(z, e1, l1, e2, l2);
    if (l2 > 0) aspect = std::min(std::sqrt(l1 / l2), 10.0);
  }
  int cols = static_cast<int>(std::ceil(std::sqrt(units * aspect)));
  int rows = static_cast<int>(std::ceil(units / cols));
  cfg.cols = std::clamp(cols, 2, 50);
  cfg.rows = std::clamp(rows, 2, 50);
  cfg.epochs = 20;
  cfg.sigma_end = 0.5;
  cfg.sigma_start = std::max(cfg.sigma_end, std::max(cfg.rows, cfg.cols) / 2.0);
  return cfg;
}

std::vector<double> SomModel::normalize(std::span<const double> raw) const {
  if (raw.size() != dim()) throw ContractViolation("som: vector width does not match model");
  std::vector<double> z(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) z[k] = (raw[k] - norm.mean[k]) / norm.stddev[k];
  return z;
}

RowMatrix SomModel::normalize(const RowMatrix& raw) const {
  if (static_cast<std::size_t>(raw.cols()) != dim())
    throw ContractViolation("som: data width does not match model");
  RowMatrix z = raw;
  for (std::size_t k = 0; k < dim(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    z.col(c) = (z.col(c).array() - norm.mean[k]) / norm.stddev[k];
  }
  return z;
}

SomModel initialize(const RowMatrix& data, const SomConfig& config, std::vector<std::string> feature_names) {
  RowMatrix z;
  return prepare(data, config, std::move(feature_names), z);
}

namespace {

SomModel run_training(const RowMatrix& data, const SomConfig& config, std::vector<std::string> feature_names,
                      bool strict) {
  RowMatrix z;
  SomModel m = prepare(data, config, std::move(feature_names), z, strict);

  const auto n = static_cast<std::size_t>(z.rows());
  const std::size_t d = m.dim();
  const std::size_t nodes = m.nodes();
  const auto dims = all_dims(d);
  std::vector<std::size_t> bmu(n);
  std::vector<double> sums(nodes * d), counts(nodes), num(nodes * d), den(nodes);

  for (int e = 0; e < config.epochs; ++e) {
    const double t = config.epochs > 1 ? static_cast<double>(e) / (config.epochs - 1) : 1.0;
    const double sigma = config.sigma_start + (config.sigma_end - config.sigma_start) * t;

    kernels::parallel::assign_bmu(view(z), view(m.codebook), dims, bmu, {});

    // Serial accumulation in row order keeps the result thread-count independent.
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[bmu[i]] += 1;
      const double* zi = z.data() + i * d;
      double* s = sums.data() + bmu[i] * d;
      for (std::size_t k = 0; k < d; ++k) s[k] += zi[k];
    }

    kernels::NeighborhoodInput in{static_cast<std::size_t>(config.rows),
                                  static_cast<std::size_t>(config.cols), d, sigma, sums, counts};
    kernels::parallel::neighborhood_update(in, num, den);
    for (std::size_t v = 0; v < nodes; ++v) {
      if (!(den[v] > 0)) continue;
      for (std::size_t k = 0; k < d; ++k)
        m.codebook(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) = num[v * d + k] / den[v];
    }
  }
  return m;
}

}  // namespace

SomModel train(const RowMatrix& data, const SomConfig& config, std::vector<std::string> feature_names) {
  return run_training(data, config, std::move(feature_names), true);
}

SomModel train_allow_constant(const RowMatrix& data, const SomConfig& config,
                              std::vector<std::string> feature_names) {
  return run_training(data, config, std::move(feature_names), false);
}

namespace {

std::vector<std::size_t> resolve_mask(const SomModel& model, const Mask& mask) {
  if (!mask) return all_dims(model.dim());
  if (mask->empty()) throw ContractViolation("som: empty BMU mask");
  for (auto k : *mask)
    if (k >= model.dim()) throw ContractViolation("som: mask dimension out of range");
  return *mask;
}

}  // namespace

std::size_t bmu_normalized(const SomModel& model, std::span<const double> z, const Mask& mask) {
  const auto dims = resolve_mask(model, mask);
  if (z.size() != model.dim()) throw ContractViolation("som: vector width does not match model");
  for (auto k : dims)
    if (!std::isfinite(z[k])) throw ContractViolation("som: non-finite query value in masked dim");
  return kernels::nearest_row(view(model.codebook), z.data(), dims);
}

std::size_t bmu(const SomModel& model, std::span<const double> x, const Mask& mask) {
  // Unmasked dims may hold anything (even NaN); they are never read.
  const auto dims = resolve_mask(model, mask);
  if (x.size() != model.dim()) throw ContractViolation("som: vector width does not match model");
  std::vector<double> z(x.size(), 0.0);
  for (auto k : dims) z[k] = (x[k] - model.norm.mean[k]) / model.norm.stddev[k];
  return bmu_normalized(model, z, dims);
}

double quantization_error(const SomModel& model, const RowMatrix& data, const Mask& mask) {
  const auto dims = resolve_mask(model, mask);
  if (data.rows() == 0) throw EmptyData("quantization_error: no rows");
  const RowMatrix z = model.normalize(data);
  std::vector<std::size_t> b(static_cast<std::size_t>(z.rows()));
  std::vector<double> d2(b.size());
  kernels::parallel::assign_bmu(view(z), view(model.codebook), dims, b, d2);
  double s = 0;
  for (double v : d2) s += std::sqrt(v);
  return s / static_cast<double>(d2.size());
}

std::vector<ComponentPlane> component_planes(const SomModel& model) {
  std::vector<ComponentPlane> planes;
  const int rows = model.config.rows, cols = model.config.cols;
  for (std::size_t k = 0; k < model.dim(); ++k) {
    ComponentPlane p;
    p.name = model.feature_names[k];
    p.normalized.resize(rows, cols);
    p.denormalized.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double z = model.codebook(r * cols + c, static_cast<Eigen::Index>(k));
        p.normalized(r, c) = z;
        p.denormalized(r, c) = model.denormalize(k, z);
      }
    }
    planes.push_back(std::move(p));
  }
  return planes;
}

std::map<std::size_t, std::vector<std::size_t>> node_assignments(const SomModel& model, const RowMatrix& data) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (std::size_t u = 0; u < model.nodes(); ++u) out[u];
  if (data.rows() == 0) return out;
  const RowMatrix z = model.normalize(data);
  std::vector<std::size_t> b(static_cast<std::size_t>(z.rows()));
  kernels::parallel::assign_bmu(view(z), view(model.codebook), all_dims(model.dim()), b, {});
  for (std::size_t i = 0; i < b.size(); ++i) out[b[i]].push_back(i);
  return out;
}

std::vector<std::size_t> mask_from_names(const SomModel& model, std::span<const std::string> names) {
  if (names.empty()) throw ContractViolation("som: empty BMU mask");
  std::vector<std::size_t> dims;
  for (auto& n : names) {
    auto it = std::find(model.feature_names.begin(), model.feature_names.end(), n);
    if (it == model.feature_names.end()) throw ContractViolation("som: unknown feature '" + n + "'");
    dims.push_back(static_cast<std::size_t>(it - model.feature_names.begin()));
  }
  return dims;
}

json to_json(const SomModel& m) {
  std::vector<double> flat(m.codebook.data(), m.codebook.data() + m.codebook.size());
  return json{{"format", "avm.som"},
              {"version", 1},
              {"config",
               {{"rows", m.config.rows},
                {"cols", m.config.cols},
                {"epochs", m.config.epochs},
                {"sigma_start", m.config.sigma_start},
                {"sigma_end", m.config.sigma_end},
                {"init", m.config.init == InitKind::LinearPca ? "linear_pca" : "random_uniform"},
                {"seed", m.config.seed}}},
              {"norm_stats", {{"mean", m.norm.mean}, {"stddev", m.norm.stddev}}},
              {"feature_names", m.feature_names},
              {"dim", m.dim()},
              {"codebook", flat}};
}

SomModel som_from_json(const json& j) {
  if (j.value("format", "") != "avm.som") throw ConfigError("not an avm.som document");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported avm.som version");
  SomModel m;
  const json& c = j.at("config");
  m.config.rows = c.at("rows");
  m.config.cols = c.at("cols");
  m.config.epochs = c.at("epochs");
  m.config.sigma_start = c.at("sigma_start");
  m.config.sigma_end = c.at("sigma_end");
  m.config.init = c.at("init") == "linear_pca" ? InitKind::LinearPca : InitKind::RandomUniform;
  m.config.seed = c.at("seed");
  m.config.check();
  m.norm.mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
  m.norm.stddev = j.at("norm_stats").at("stddev").get<std::vector<double>>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  const std::size_t d = j.at("dim");
  const auto flat = j.at("codebook").get<std::vector<double>>();
  if (flat.size() != d * static_cast<std::size_t>(m.config.nodes()) || m.norm.mean.size() != d ||
      m.norm.stddev.size() != d || m.feature_names.size() != d)
    throw ConfigError("avm.som: inconsistent sizes");
  for (double s : m.norm.stddev)
    if (!(s > 0)) throw ConfigError("avm.som: non-positive stddev");
  m.codebook = Eigen::Map<const RowMatrix>(flat.data(), m.config.nodes(), static_cast<Eigen::Index>(d));
  if (!m.codebook.allFinite()) throw ConfigError("avm.som: non-finite codebook entry");
  return m;
}

std::string plane_to_csv(const RowMatrix& plane) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index r = 0; r < plane.rows(); ++r) {
    for (Eigen::Index c = 0; c < plane.cols(); ++c) os << (c ? "," : "") << plane(r, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace avm::som
