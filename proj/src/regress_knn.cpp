#include <cmath>

#include "avm/kernels.hpp"
#include "avm/regress.hpp"

namespace avm::regress {

StandardScaler StandardScaler::fit(const RowMatrix& x) {
  StandardScaler s;
  const auto d = static_cast<std::size_t>(x.cols());
  const auto n = static_cast<double>(x.rows());
  s.mean.resize(d);
  s.stddev.resize(d);
  s.constant.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    const auto col = x.col(static_cast<Eigen::Index>(k));
    const double m = n > 0 ? col.mean() : 0.0;
    const double sd = n > 0 ? std::sqrt((col.array() - m).square().sum() / n) : 0.0;
    s.mean[k] = m;
    const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(m)));
    s.constant[k] = flat;
    s.stddev[k] = flat ? 1.0 : sd;
  }
  return s;
}

RowMatrix StandardScaler::transform(const RowMatrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != dim()) throw ContractViolation("scaler: width mismatch");
  RowMatrix z = x;
  for (std::size_t k = 0; k < dim(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    z.col(c) = (z.col(c).array() - mean[k]) / stddev[k];
  }
  return z;
}

void StandardScaler::transform(std::span<const double> x, std::span<double> out) const {
  if (x.size() != dim() || out.size() != dim()) throw ContractViolation("scaler: width mismatch");
  for (std::size_t k = 0; k < dim(); ++k) out[k] = (x[k] - mean[k]) / stddev[k];
}

KnnModel fit_knn(const RowMatrix& x, const Vector& y, int k) {
  if (x.rows() != y.size()) throw ContractViolation("fit_knn: X/y row mismatch");
  if (k < 1) throw ConfigError("fit_knn: k must be >= 1");
  if (k > x.rows()) throw ConfigError("fit_knn: k=" + std::to_string(k) + " exceeds n=" + std::to_string(x.rows()));
  KnnModel m;
  m.scaler = StandardScaler::fit(x);
  m.train_x = m.scaler.transform(x);
  m.train_y = y;
  m.k = k;
  return m;
}

namespace {

kernels::RowsView view(const RowMatrix& m) {
  return {m.data(), static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

}  // namespace

double predict_knn(const KnnModel& m, std::span<const double> x) {
  std::vector<double> z(m.scaler.dim());
  m.scaler.transform(x, z);
  const auto k = static_cast<std::size_t>(m.k);
  std::vector<std::size_t> idx(k);
  kernels::knn_one(view(m.train_x), z.data(), k, idx.data());
  double s = 0;
  for (auto i : idx) s += m.train_y(static_cast<Eigen::Index>(i));
  return s / static_cast<double>(k);
}

Vector predict_knn(const KnnModel& m, const RowMatrix& queries) {
  const RowMatrix z = m.scaler.transform(queries);
  const auto k = static_cast<std::size_t>(m.k);
  const auto q = static_cast<std::size_t>(z.rows());
  std::vector<std::size_t> idx(q * k);
  kernels::parallel::knn_indices(view(m.train_x), view(z), k, idx);
  Vector out(static_cast<Eigen::Index>(q));
  for (std::size_t i = 0; i < q; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += m.train_y(static_cast<Eigen::Index>(idx[i * k + j]));
    out(static_cast<Eigen::Index>(i)) = s / static_cast<double>(k);
  }
  return out;
}

}  // namespace avm::regress
