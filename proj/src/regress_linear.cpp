#include <cmath>

#include "avm/regress.hpp"

namespace avm::regress {

namespace {

struct Standardized {
  StandardScaler scaler;
  Eigen::MatrixXd x;  // centered and scaled, constant columns zero
  Vector y;           // centered
  double y_mean = 0;
};

Standardized standardize(const RowMatrix& x, const Vector& y) {
  Standardized s;
  s.scaler = StandardScaler::fit(x);
  s.x = s.scaler.transform(x);
  for (std::size_t k = 0; k < s.scaler.dim(); ++k)
    if (s.scaler.constant[k]) s.x.col(static_cast<Eigen::Index>(k)).setZero();
  s.y_mean = y.mean();
  s.y = y.array() - s.y_mean;
  return s;
}

// Maps standardized slopes back to raw-space (intercept, slopes).
std::vector<double> raw_weights(const Standardized& s, const Vector& m) {
  const std::size_t d = s.scaler.dim();
  std::vector<double> w(d + 1);
  double intercept = s.y_mean;
  for (std::size_t k = 0; k < d; ++k) {
    const double slope = s.scaler.constant[k] ? 0.0 : m(static_cast<Eigen::Index>(k)) / s.scaler.stddev[k];
    w[k + 1] = slope;
    intercept -= slope * s.scaler.mean[k];
  }
  w[0] = intercept;
  return w;
}

}  // namespace

LinearModel fit_ols(const RowMatrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw ContractViolation("fit_ols: X/y row mismatch");
  if (x.rows() <= x.cols())
    throw InsufficientData("fit_ols: need n > d (n=" + std::to_string(x.rows()) + ", d=" + std::to_string(x.cols()) + ")");
  const Standardized s = standardize(x, y);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(s.x);
  const Vector m = cod.solve(s.y);
  LinearModel lm;
  lm.kind = LinearKind::Ols;
  lm.weights = raw_weights(s, m);
  lm.rank_deficient = cod.rank() < s.x.cols();
  return lm;
}

LinearModel fit_bayesian_ridge(const RowMatrix& x, const Vector& y, const BayesianRidgeOptions& opts) {
  if (x.rows() != y.size()) throw ContractViolation("fit_bayesian_ridge: X/y row mismatch");
  if (x.rows() <= 2) throw InsufficientData("fit_bayesian_ridge: need n > 2");
  if (opts.max_iter < 1) throw ConfigError("fit_bayesian_ridge: max_iter must be >= 1");
  const Standardized s = standardize(x, y);
  const auto n = static_cast<double>(x.rows());
  const Eigen::Index d = s.x.cols();

  LinearModel lm;
  lm.kind = LinearKind::BayesianRidge;

  const double y_sq = s.y.squaredNorm();
  if (y_sq == 0) {
    lm.weights = raw_weights(s, Vector::Zero(d));
    return lm;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.x.transpose() * s.x);
  const Vector eig = es.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd& v = es.eigenvectors();
  const Vector xty_rot = v.transpose() * (s.x.transpose() * s.y);

  double alpha = opts.fixed_alpha.value_or(1.0);
  double beta = n / y_sq;
  auto posterior_mean = [&](double a, double b) {
    Vector r(d);
    for (Eigen::Index i = 0; i < d; ++i) r(i) = b * xty_rot(i) / (b * eig(i) + a);
    return Vector(v * r);
  };

  lm.converged = false;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vector m = posterior_mean(alpha, beta);
    double gamma = 0;
    for (Eigen::Index i = 0; i < d; ++i) gamma += beta * eig(i) / (beta * eig(i) + alpha);
    const double rss = std::max((s.y - s.x * m).squaredNorm(), 1e-300 + 1e-20 * y_sq);
    const double mm = m.squaredNorm();
    const double beta_new = (n - gamma) / rss;
    double alpha_new = alpha;
    if (!opts.fixed_alpha) alpha_new = mm > 0 ? gamma / mm : alpha * 1e6;
    const double watched = opts.fixed_alpha ? std::abs(beta_new - beta) / beta : std::abs(alpha_new - alpha) / alpha;
    alpha = alpha_new;
    beta = beta_new;
    if (watched < opts.tol) {
      lm.converged = true;
      ++it;
      break;
    }
  }
  lm.iterations = it;
  lm.alpha = alpha;
  lm.beta = beta;
  lm.weights = raw_weights(s, posterior_mean(alpha, beta));
  return lm;
}

double predict_linear(const LinearModel& m, std::span<const double> x) {
  if (x.size() + 1 != m.weights.size()) throw ContractViolation("predict_linear: width mismatch");
  double s = m.weights[0];
  for (std::size_t k = 0; k < x.size(); ++k) s += m.weights[k + 1] * x[k];
  return s;
}

}  // namespace avm::regress
