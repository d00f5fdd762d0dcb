#include "avm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace avm::eval {

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed) {
  if (n < 5) throw InsufficientData("split: need at least 5 rows, got " + std::to_string(n));
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("split: train_fraction must be in (0, 1)");
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train == n) throw InsufficientData("split: degenerate partition");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  idx.resize(n_train);
  return {std::move(idx), std::move(test)};
}

double compute_are(double actual, double predicted) {
  if (!(actual > 0)) throw DomainError("compute_are: actual must be positive");
  return std::abs(actual - predicted) / actual;
}

EvalReport report_from_ares(std::string algo, std::span<const double> ares, std::uint64_t seed) {
  if (ares.empty()) throw EmptyData("evaluate: empty test set");
  EvalReport r;
  r.algo = std::move(algo);
  r.seed = seed;
  r.n_test = ares.size();
  std::vector<double> s(ares.begin(), ares.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double med = n % 2 ? s[n / 2] : (s[n / 2 - 1] + s[n / 2]) / 2;
  r.median_are_pct = 100.0 * med;
  std::size_t le1 = 0, lt5 = 0, lt15 = 0;
  for (double a : s) {
    le1 += a <= 0.01;
    lt5 += a < 0.05;
    lt15 += a < 0.15;
  }
  const double dn = static_cast<double>(n);
  r.pct_le_1 = 100.0 * static_cast<double>(le1) / dn;
  r.pct_lt_5 = 100.0 * static_cast<double>(lt5) / dn;
  r.pct_lt_15 = 100.0 * static_cast<double>(lt15) / dn;
  return r;
}

EvalReport evaluate(const PredictFn& predict, std::span<const ingest::FeatureVector> test, std::string algo,
                    std::uint64_t seed) {
  if (test.empty()) throw EmptyData("evaluate: empty test set");
  std::vector<double> ares(test.size());
  for (std::size_t i = 0; i < test.size(); ++i)
    ares[i] = compute_are(test[i].target_rent_chf, predict(test[i].values));
  return report_from_ares(std::move(algo), ares, seed);
}

Xy to_xy(std::span<const ingest::FeatureVector> rows) {
  Xy out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ingest::kFeatureCount));
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < ingest::kFeatureCount; ++k) out.x(r, static_cast<Eigen::Index>(k)) = rows[i].values[k];
    out.y(r) = rows[i].target_rent_chf;
  }
  return out;
}

std::vector<ingest::FeatureVector> encode_all(std::span<const CleanListing> listings) {
  std::vector<ingest::FeatureVector> out;
  out.reserve(listings.size());
  for (auto& l : listings) out.push_back(ingest::encode_features(l));
  return out;
}

std::vector<EvalReport> benchmark_all(std::span<const ingest::FeatureVector> dataset,
                                      std::span<const regress::Algo> algos, std::span<const std::uint64_t> seeds,
                                      double train_fraction) {
  if (seeds.empty()) throw ConfigError("benchmark_all: at least one seed required");
  const std::vector<std::string> names(ingest::kFeatureNames.begin(), ingest::kFeatureNames.end());
  std::vector<EvalReport> reports;
  for (auto seed : seeds) {
    auto [train, test] = split(dataset, train_fraction, seed);
    const Xy tr = to_xy(train);
    const Xy te = to_xy(test);
    for (auto algo : algos) {
      const std::string name(regress::to_string(algo));
      try {
        const auto model = regress::fit(algo, tr.x, tr.y, seed, names);
        const regress::Vector pred = model.predict(te.x);
        std::vector<double> ares(test.size());
        for (std::size_t i = 0; i < test.size(); ++i)
          ares[i] = compute_are(te.y(static_cast<Eigen::Index>(i)), pred(static_cast<Eigen::Index>(i)));
        reports.push_back(report_from_ares(name, ares, seed));
      } catch (const std::exception& e) {
        EvalReport r;
        r.algo = name;
        r.seed = seed;
        r.n_test = test.size();
        r.error = e.what();
        reports.push_back(std::move(r));
      }
    }
  }
  return reports;
}

double median_of_medians(std::span<const EvalReport> reports, std::string_view algo) {
  std::vector<double> m;
  for (auto& r : reports)
    if (r.algo == algo && !r.error) m.push_back(r.median_are_pct);
  if (m.empty()) throw EmptyData("median_of_medians: no successful reports for " + std::string(algo));
  std::sort(m.begin(), m.end());
  const std::size_t n = m.size();
  return n % 2 ? m[n / 2] : (m[n / 2 - 1] + m[n / 2]) / 2;
}

std::string display_name(std::string_view algo) {
  if (algo == "rf") return "Random Forest";
  if (algo == "knn") return "KNN";
  if (algo == "bridge") return "Bayesian Regularized Regression";
  if (algo == "ols") return "Linear Regression";
  if (algo == "lp1") return "Local Regression P-Order=1";
  if (algo == "lp2") return "Local Regression P-Order=2";
  if (algo == "lp3") return "Local Regression P-Order=3";
  return std::string(algo);
}

std::string render_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-34s %6s %8s %8s %8s %8s\n", "Algorithm", "Seed", "Median", "<=1%", "<5%", "<15%");
  os << buf;
  for (auto& r : reports) {
    if (r.error) {
      std::snprintf(buf, sizeof buf, "%-34s %6llu  FAILED: %s\n", display_name(r.algo).c_str(),
                    static_cast<unsigned long long>(r.seed), r.error->c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%-34s %6llu %8.2f %8.2f %8.2f %8.2f\n", display_name(r.algo).c_str(),
                    static_cast<unsigned long long>(r.seed), r.median_are_pct, r.pct_le_1, r.pct_lt_5, r.pct_lt_15);
    }
    os << buf;
  }
  return os.str();
}

std::string render_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os.precision(10);
  os << "algo,seed,n_test,median_are_pct,pct_le_1,pct_lt_5,pct_lt_15,error\n";
  for (auto& r : reports) {
    os << r.algo << ',' << r.seed << ',' << r.n_test << ',';
    if (r.error) {
      std::string e = *r.error;
      std::replace(e.begin(), e.end(), ',', ';');
      os << ",,,," << e << '\n';
    } else {
      os << r.median_are_pct << ',' << r.pct_le_1 << ',' << r.pct_lt_5 << ',' << r.pct_lt_15 << ",\n";
    }
  }
  return os.str();
}

}  // namespace avm::eval
