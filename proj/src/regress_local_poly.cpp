#include <algorithm>
#include <cmath>
#include <numeric>

#include "avm/regress.hpp"

namespace avm::regress {

namespace {

// Monomials over `cont` dims with total degree 1..order, each a list of
// (possibly repeated) dimension indices. The constant term is implicit.
std::vector<std::vector<std::size_t>> monomials(const std::vector<std::size_t>& cont, int order) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  auto rec = [&](auto& self, std::size_t start, int left) -> void {
    if (!cur.empty()) out.push_back(cur);
    if (left == 0) return;
    for (std::size_t i = start; i < cont.size(); ++i) {
      cur.push_back(cont[i]);
      self(self, i, left - 1);
      cur.pop_back();
    }
  };
  rec(rec, 0, order);
  std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.size() < b.size(); });
  return out;
}

std::size_t binom(std::size_t n, std::size_t k) {
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

std::size_t LocalPolyModel::basis_size(int order) const {
  const std::size_t d = scaler.dim();
  const std::size_t lin = options.linear_only.size();
  const std::size_t cont = d - lin;
  return binom(cont + static_cast<std::size_t>(order), static_cast<std::size_t>(order)) + lin;
}

std::size_t LocalPolyModel::pilot_k(int order) const { return std::max<std::size_t>(30, 3 * basis_size(order)); }

LocalPolyModel fit_local_poly(const RowMatrix& x, const Vector& y, const LocalPolyOptions& opts) {
  if (x.rows() != y.size()) throw ContractViolation("fit_local_poly: X/y row mismatch");
  if (opts.order < 1 || opts.order > 3) throw ConfigError("fit_local_poly: order must be 1, 2 or 3");
  if (x.rows() < 1) throw InsufficientData("fit_local_poly: no training rows");
  if (!(opts.ridge_jitter > 0)) throw ConfigError("fit_local_poly: ridge_jitter must be positive");
  if (opts.support_factor < 1) throw ConfigError("fit_local_poly: support_factor must be >= 1");
  for (auto k : opts.linear_only)
    if (k >= static_cast<std::size_t>(x.cols())) throw ConfigError("fit_local_poly: linear_only index out of range");
  LocalPolyModel m;
  m.scaler = StandardScaler::fit(x);
  m.train_x = m.scaler.transform(x);
  m.train_y = y;
  m.options = opts;
  std::sort(m.options.linear_only.begin(), m.options.linear_only.end());
  m.options.linear_only.erase(std::unique(m.options.linear_only.begin(), m.options.linear_only.end()),
                              m.options.linear_only.end());
  return m;
}

double predict_local_poly(const LocalPolyModel& m, std::span<const double> x) {
  const std::size_t d = m.scaler.dim();
  const auto n = static_cast<std::size_t>(m.train_x.rows());
  std::vector<double> z(d);
  m.scaler.transform(x, z);

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = m.train_x.data() + i * d;
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (r[k] - z[k]) * (r[k] - z[k]);
    d2[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto by_dist = [&](std::size_t a, std::size_t b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); };

  const std::size_t pilot = std::min(m.pilot_k(m.options.order), n);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pilot - 1), order.end(), by_dist);
  const double h2 = d2[order[pilot - 1]];

  if (!(h2 > 0)) {
    // Query coincides with at least `pilot` training rows.
    double s = 0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (d2[i] == 0) s += m.train_y(static_cast<Eigen::Index>(i)), ++c;
    return s / static_cast<double>(c);
  }
  const double h = std::sqrt(h2);

  const std::size_t keep = std::min(n, pilot * static_cast<std::size_t>(m.options.support_factor));
  if (keep < n)
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep - 1), order.end(), by_dist);
  order.resize(keep);
  std::sort(order.begin(), order.end());

  Vector w(static_cast<Eigen::Index>(keep)), yy(static_cast<Eigen::Index>(keep));
  std::size_t support = 0;
  for (std::size_t j = 0; j < keep; ++j) {
    const double wj = std::exp(-d2[order[j]] / (2 * h2));
    w(static_cast<Eigen::Index>(j)) = wj;
    yy(static_cast<Eigen::Index>(j)) = m.train_y(static_cast<Eigen::Index>(order[j]));
    if (wj > 1e-12) ++support;
  }

  std::vector<std::size_t> cont;
  for (std::size_t k = 0; k < d; ++k)
    if (!std::binary_search(m.options.linear_only.begin(), m.options.linear_only.end(), k)) cont.push_back(k);

  for (int ord = m.options.order; ord >= 1; --ord) {
    const std::size_t p = m.basis_size(ord);
    if (support < p) continue;
    const auto monos = monomials(cont, ord);
    Eigen::MatrixXd b(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(p));
    for (std::size_t j = 0; j < keep; ++j) {
      const double* r = m.train_x.data() + order[j] * d;
      auto row = b.row(static_cast<Eigen::Index>(j));
      Eigen::Index c = 0;
      row(c++) = 1.0;
      for (auto& mono : monos) {
        double v = 1.0;
        for (auto k : mono) v *= (r[k] - z[k]) / h;
        row(c++) = v;
      }
      for (auto k : m.options.linear_only) row(c++) = (r[k] - z[k]) / h;
    }
    const Eigen::MatrixXd bw = b.transpose() * w.asDiagonal();
    Eigen::MatrixXd gram = bw * b;
    gram.diagonal().array() += m.options.ridge_jitter;
    const Vector coef = gram.ldlt().solve(bw * yy);
    // The basis is centered on the query, so only the constant term survives.
    if (std::isfinite(coef(0))) return coef(0);
  }
  return w.dot(yy) / w.sum();
}

}  // namespace avm::regress
