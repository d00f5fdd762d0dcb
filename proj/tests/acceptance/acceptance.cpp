// Acceptance run: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails or exceeds its time budget.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <set>
#include <thread>

#include "avm/analytics.hpp"
#include "avm/eval.hpp"
#include "avm/osm.hpp"
#include "avm/regress.hpp"
#include "avm/server.hpp"
#include "avm/som.hpp"
#include "avm/spatial_index.hpp"
#include "avm/store.hpp"
#include "fixtures.hpp"

#include <httplib.h>

using namespace avm;
using nlohmann::json;

namespace {

// Collects failed sub-checks; a criterion passes when none fail.
struct Checker {
  std::vector<std::string> failures;
  std::ostringstream note;
  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
    if (!ok && failures.size() == 5) failures.push_back("...");
  }
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<void(Checker&)> run;
};

std::vector<double> row(const RowMatrix& x, Eigen::Index i) {
  return std::vector<double>(x.row(i).data(), x.row(i).data() + x.cols());
}

double slope_norm(const regress::LinearModel& m) {
  double s = 0;
  for (double w : m.slopes()) s += w * w;
  return std::sqrt(s);
}

// ---------------------------------------------------------------- metric

void metric(Checker& c) {
  c.expect(eval::compute_are(2000, 1800) == std::abs(2000.0 - 1800.0) / 2000.0, "ARE 2000/1800");
  c.expect(eval::compute_are(1000, 1000) == 0.0, "ARE identity");
  c.expect(eval::compute_are(1000, 1150) == std::abs(1000.0 - 1150.0) / 1000.0, "ARE 1000/1150");
  bool threw = false;
  try {
    eval::compute_are(0, 5);
  } catch (const DomainError&) {
    threw = true;
  }
  c.expect(threw, "A <= 0 rejected");

  std::vector<double> ares = {0.005, 0.02, 0.10, 0.20};
  auto r = eval::report_from_ares("x", ares);
  c.expect(r.median_are_pct == (0.02 + 0.10) / 2 * 100, "median 6.0");
  c.expect(std::abs(r.median_are_pct - 6.0) < 1e-12, "median ~6.0");
  c.expect(r.pct_le_1 == 25.0 && r.pct_lt_5 == 50.0 && r.pct_lt_15 == 75.0, "hand percentages");

  std::vector<double> edges = {0.01, 0.05, 0.15, 0.0};
  auto b = eval::report_from_ares("b", edges);
  c.expect(b.pct_le_1 == 50.0, "0.01 counts in <=1%");
  c.expect(b.pct_lt_5 == 50.0, "0.05 excluded from <5%");
  c.expect(b.pct_lt_15 == 75.0, "0.15 excluded from <15%");

  ingest::FeatureVector f;
  f.target_rent_chf = 1500;
  f.values[0] = 1500;
  std::vector<ingest::FeatureVector> perfect(9, f);
  auto p = eval::evaluate([](std::span<const double> x) { return x[0]; }, perfect);
  c.expect(p.median_are_pct == 0 && p.pct_le_1 == 100 && p.pct_lt_5 == 100 && p.pct_lt_15 == 100,
           "perfect predictor");
}

// ---------------------------------------------------------------- regressors

void knn_oracle(Checker& c) {
  const RowMatrix x = avm::testing::random_matrix(500, 11, 101, 3.0);
  regress::Vector y(500);
  Rng rng(102);
  for (auto& v : y) v = 500 + 4000 * rng.uniform();
  auto m = regress::fit_knn(x, y, 9);
  const RowMatrix xs = m.scaler.transform(x);
  const RowMatrix q = avm::testing::random_matrix(100, 11, 103, 3.0);
  const RowMatrix qz = m.scaler.transform(q);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, Eigen::Index>> d;
    for (Eigen::Index j = 0; j < xs.rows(); ++j) d.emplace_back((xs.row(j) - qz.row(i)).squaredNorm(), j);
    std::sort(d.begin(), d.end());
    double s = 0;
    for (int k = 0; k < 9; ++k) s += y(d[static_cast<std::size_t>(k)].second);
    // Same neighbour set, summed in the same order, gives the same double.
    c.expect(regress::predict_knn(m, row(q, i)) == s / 9, "query " + std::to_string(i));
  }
}

std::vector<double> gauss_normal_equation(const RowMatrix& x, const regress::Vector& y) {
  const auto n = static_cast<std::size_t>(x.rows()), p = static_cast<std::size_t>(x.cols()) + 1;
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(p, 1.0);
    for (std::size_t j = 1; j < p; ++j) r[j] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1));
    for (std::size_t u = 0; u < p; ++u) {
      for (std::size_t v = 0; v < p; ++v) a[u][v] += r[u] * r[v];
      a[u][p] += r[u] * y(static_cast<Eigen::Index>(i));
    }
  }
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k <= p; ++k) a[r][k] -= f * a[col][k];
    }
  }
  std::vector<double> w(p);
  for (std::size_t r = 0; r < p; ++r) w[r] = a[r][p] / a[r][r];
  return w;
}

void ols_oracle(Checker& c) {
  double worst_rel = 0, worst_orth = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const RowMatrix x = avm::testing::random_matrix(50, 11, 200 + s);
    regress::Vector y(50);
    Rng rng(300 + s);
    for (Eigen::Index i = 0; i < 50; ++i) y(i) = 1000 + 50 * x.row(i).sum() + 20 * rng.normal();
    auto m = regress::fit_ols(x, y);
    const auto ne = gauss_normal_equation(x, y);
    for (std::size_t j = 0; j < ne.size(); ++j) {
      const double rel = std::abs(m.weights[j] - ne[j]) / std::max(1.0, std::abs(ne[j]));
      worst_rel = std::max(worst_rel, rel);
    }
    regress::Vector res(50);
    for (Eigen::Index i = 0; i < 50; ++i) res(i) = y(i) - regress::predict_linear(m, row(x, i));
    worst_orth = std::max(worst_orth, std::abs(res.sum()));
    for (Eigen::Index j = 0; j < 11; ++j) worst_orth = std::max(worst_orth, std::abs(res.dot(x.col(j))));
  }
  c.note << "max rel diff " << worst_rel << ", max |r.x| " << worst_orth;
  c.expect(worst_rel <= 1e-8, "normal-equation agreement");
  c.expect(worst_orth <= 1e-8, "residual orthogonality");
}

void bayes_ridge(Checker& c) {
  double worst = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RowMatrix x = avm::testing::random_matrix(80, 6, 400 + s);
    regress::Vector y(80);
    Rng rng(500 + s);
    for (Eigen::Index i = 0; i < 80; ++i) y(i) = 7 + 3 * x(i, 0) - 2 * x(i, 4) + 0.5 * rng.normal();
    regress::BayesianRidgeOptions o;
    o.fixed_alpha = 1e-12;
    auto b = regress::fit_bayesian_ridge(x, y, o);
    auto ols = regress::fit_ols(x, y);
    for (std::size_t j = 0; j < ols.weights.size(); ++j) worst = std::max(worst, std::abs(b.weights[j] - ols.weights[j]));
  }
  c.expect(worst <= 1e-6, "pinned prior equals OLS");
  int shrunk = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const RowMatrix x = avm::testing::random_matrix(100, 8, 600 + s);
    regress::Vector y(100);
    Rng rng(700 + s);
    for (Eigen::Index i = 0; i < 100; ++i) y(i) = 0.3 * x(i, 1) + rng.normal();
    shrunk += slope_norm(regress::fit_bayesian_ridge(x, y)) < slope_norm(regress::fit_ols(x, y));
  }
  c.note << "max |w - w_ols| " << worst << ", shrinkage " << shrunk << "/100";
  c.expect(shrunk >= 95, "shrinkage in >= 95% of fixtures");
}

void forest(Checker& c) {
  RowMatrix x(4, 1);
  x << 1, 2, 3, 4;
  regress::Vector y(4);
  y << 10, 10, 50, 50;
  regress::ForestOptions o;
  o.n_trees = 1;
  o.bootstrap = false;
  auto f = regress::fit_random_forest(x, y, o);
  const auto& root = f.trees.at(0).nodes.at(0);
  c.expect(root.feature == 0 && root.threshold > 2 && root.threshold < 3, "root split in (2,3)");
  c.expect(f.trees[0].nodes.at(static_cast<std::size_t>(root.left)).value == 10, "left leaf 10");
  c.expect(f.trees[0].nodes.at(static_cast<std::size_t>(root.right)).value == 50, "right leaf 50");
  std::vector<double> q = {1.5};
  c.expect(regress::predict_forest(f, q) == 10, "x=1.5 -> 10");

  const RowMatrix xc = avm::testing::random_matrix(60, 4, 800);
  auto fc = regress::fit_random_forest(xc, regress::Vector::Constant(60, 2222), {20, 1});
  RowMatrix one(1, 3);
  one << 1, 2, 3;
  regress::Vector y1(1);
  y1 << 3333;
  auto f1 = regress::fit_random_forest(one, y1, {20, 2});

  const RowMatrix xt = avm::testing::random_matrix(400, 5, 801);
  regress::Vector yt(400);
  for (Eigen::Index i = 0; i < 400; ++i) yt(i) = 2000 + 400 * xt(i, 0) + 200 * std::sin(xt(i, 1) * 3);
  auto ft = regress::fit_random_forest(xt, yt, {80, 3});
  const RowMatrix qs = avm::testing::random_matrix(1000, 5, 802, 4.0);
  for (Eigen::Index i = 0; i < qs.rows(); ++i) {
    const auto r = row(qs, i);
    c.expect(regress::predict_forest(fc, std::span<const double>(r).first(4)) == 2222, "constant target");
    c.expect(regress::predict_forest(f1, std::span<const double>(r).first(3)) == 3333, "single row");
    const double p = regress::predict_forest(ft, r);
    c.expect(p >= yt.minCoeff() && p <= yt.maxCoeff(), "bounded prediction");
  }
}

void local_poly(Checker& c) {
  Rng rng(900);
  const int n = 1500;
  RowMatrix x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = rng.uniform(-2, 2), x(i, 1) = rng.uniform(-2, 2);
  const std::function<double(double, double)> polys[3] = {
      [](double a, double b) { return 4 - 2 * a + 3 * b; },
      [](double a, double b) { return 1 + a - b + 0.5 * a * a - a * b + 2 * b * b; },
      [](double a, double b) { return 2 - a + 0.3 * a * a * a - 0.2 * a * b * b + b * b - 0.1 * b * b * b; }};
  double worst = 0;
  for (int order = 1; order <= 3; ++order) {
    regress::Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = polys[order - 1](x(i, 0), x(i, 1));
    regress::LocalPolyOptions o;
    o.order = order;
    auto m = regress::fit_local_poly(x, y, o);
    for (int q = 0; q < 25; ++q) {
      std::vector<double> p = {rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
      const double err = std::abs(regress::predict_local_poly(m, p) - polys[order - 1](p[0], p[1]));
      worst = std::max(worst, err);
      c.expect(err < 1e-6, "order " + std::to_string(order) + " error " + std::to_string(err));
    }
  }
  c.note << "max abs error " << worst;
}

void benchmark_ordering(Checker& c) {
  eval::SyntheticConfig sc;
  sc.n = 5000;
  sc.seed = 2016;
  sc.noise_sd_chf = 150;
  sc.city_centers = eval::default_city_centers();
  c.expect(sc.city_centers.size() == 3, "3 city centers");
  const auto rows = eval::encode_all(eval::generate_synthetic(sc).listings);
  const std::vector<regress::Algo> algos = {regress::Algo::Rf, regress::Algo::Knn, regress::Algo::Ols};
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  const auto reps = eval::benchmark_all(rows, algos, seeds);
  for (auto& r : reps) {
    c.expect(!r.error, r.algo + " failed: " + r.error.value_or(""));
    c.expect(0 <= r.pct_le_1 && r.pct_le_1 <= r.pct_lt_5 && r.pct_lt_5 <= r.pct_lt_15 && r.pct_lt_15 <= 100,
             "threshold monotonicity");
  }
  const double rf = eval::median_of_medians(reps, "rf"), knn = eval::median_of_medians(reps, "knn"),
               ols = eval::median_of_medians(reps, "ols");
  c.note << "median-of-medians ARE%: rf " << rf << ", knn " << knn << ", ols " << ols;
  c.expect(rf < ols, "RF < OLS");
  c.expect(knn < ols, "KNN < OLS");
}

// ---------------------------------------------------------------- SOM and index

som::SomConfig grid(int rows, int cols, std::uint64_t seed = 1) {
  som::SomConfig s;
  s.rows = rows;
  s.cols = cols;
  s.epochs = 20;
  s.sigma_start = std::max(rows, cols) / 2.0;
  s.sigma_end = 0.5;
  s.seed = seed;
  return s;
}

void som_criterion(Checker& c) {
  const RowMatrix x = avm::testing::random_matrix(2000, 4, 1000);
  for (auto init : {som::InitKind::LinearPca, som::InitKind::RandomUniform}) {
    auto cfg = grid(8, 6, 3);
    cfg.init = init;
    c.expect(som::train(x, cfg).codebook == som::train(x, cfg).codebook, "bit-identical rerun");
  }
  for (std::uint64_t s = 0; s < 20; ++s) {
    const RowMatrix xs = avm::testing::random_matrix(300 + 20 * s, 2 + s % 4, 1100 + s);
    auto cfg = grid(3 + static_cast<int>(s % 4), 5, s);
    if (s % 2) cfg.init = som::InitKind::RandomUniform;
    const double before = som::quantization_error(som::initialize(xs, cfg), xs);
    const double after = som::quantization_error(som::train(xs, cfg), xs);
    c.expect(after <= before, "QE fixture " + std::to_string(s));
  }

  const double centers[4][2] = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  RowMatrix cl(400, 2);
  Rng rng(1200);
  for (Eigen::Index i = 0; i < 400; ++i) {
    cl(i, 0) = centers[i / 100][0] + 0.3 * rng.normal();
    cl(i, 1) = centers[i / 100][1] + 0.3 * rng.normal();
  }
  auto cfg = grid(2, 2);
  cfg.sigma_start = 1.0;
  cfg.sigma_end = 0.1;
  cfg.epochs = 30;
  auto m = som::train(cl, cfg);
  const RowMatrix z = m.normalize(cl);
  std::set<std::size_t> used;
  double worst = 0;
  for (int k = 0; k < 4; ++k) {
    const Eigen::RowVectorXd mean = z.middleRows(k * 100, 100).colwise().mean();
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t u = 0; u < 4; ++u) {
      const double d = (m.codebook.row(static_cast<Eigen::Index>(u)) - mean).norm();
      if (d < bd) bd = d, best = u;
    }
    worst = std::max(worst, bd);
    used.insert(best);
  }
  c.note << "4-cluster max node distance " << worst;
  c.expect(worst < 0.1, "nodes within 0.1 of cluster means");
  c.expect(used.size() == 4, "distinct nodes per cluster");
}

CleanListing priced(std::size_t i, double lat, double lng, double ppm2) {
  auto l = avm::testing::make_listing("P" + std::to_string(i), 8000, 3.5, 100, ppm2 * 100);
  l.lat = lat;
  l.lng = lng;
  return l;
}

void index_criterion(Checker& c) {
  Rng rng(1300);
  std::vector<CleanListing> flat;
  for (std::size_t i = 0; i < 300; ++i) {
    auto l = priced(i, 47.3 + 0.2 * rng.uniform(), 8.4 + 0.3 * rng.uniform(), 0);
    l.living_space_m2 = 100;
    l.gross_rent_chf = 3000;
    flat.push_back(l);
  }
  auto fm = index::build_index(flat, grid(5, 5));
  for (int q = 0; q < 100; ++q) {
    const double lat = 47.31 + 0.0018 * q, lng = 8.41 + 0.0028 * q;
    c.expect(std::abs(index::estimate_index(fm, lat, lng, 5, index::Strategy::NodeMedian).price_per_m2 - 30) < 1e-9,
             "constant median");
    c.expect(index::estimate_index(fm, lat, lng, 5, index::Strategy::SampleDraw, q).price_per_m2 == 30,
             "constant sample");
  }

  const auto mixed = avm::testing::random_listings(800, 1301);
  auto mm = index::build_index(mixed, grid(8, 8));
  std::multiset<double> prices;
  for (auto& s : mm.samples()) prices.insert(s.price_per_m2);
  for (int q = 0; q < 1000; ++q) {
    const double lat = 46 + 1.5 * rng.uniform(), lng = 6.5 + 3 * rng.uniform();
    const int k = 1 + static_cast<int>(rng.index(10));
    auto e = index::estimate_index(mm, lat, lng, k, index::Strategy::SampleDraw, static_cast<std::uint64_t>(q));
    c.expect(prices.count(e.price_per_m2) > 0, "sample membership");
  }

  std::vector<CleanListing> two;
  for (std::size_t i = 0; i < 400; ++i) {
    const bool east = i % 2;
    two.push_back(priced(i, 47.35 + 0.03 * rng.normal(), (east ? 8.75 : 8.35) + 0.03 * rng.normal(),
                         (east ? 40.0 : 20.0) + 0.2 * rng.normal()));
  }
  auto tm = index::build_index(two, grid(6, 6));
  const double west = index::estimate_index(tm, 47.35, 8.35, 1, index::Strategy::NodeMedian).price_per_m2;
  const double east = index::estimate_index(tm, 47.35, 8.75, 1, index::Strategy::NodeMedian).price_per_m2;
  c.note << "two-cluster west " << west << ", east " << east;
  c.expect(std::abs(west - 20) <= 1.0, "west within 5%");
  c.expect(std::abs(east - 40) <= 2.0, "east within 5%");
}

void throughput(Checker& c) {
  avm::testing::TempDir dir("accept_bulk");
  const auto path = dir.path() / "buildings.osm";
  {
    std::ofstream out(path);
    osm::write_synthetic_extract(out, 100000, 77);
  }
  std::ifstream in(path);
  auto parsed = osm::parse_osm_buildings(in);
  c.expect(parsed.buildings.size() == 100000, "100k buildings parsed");

  eval::SyntheticConfig sc;
  sc.n = 5000;
  sc.seed = 5;
  sc.noise_sd_chf = 150;
  sc.city_centers = eval::default_city_centers();
  auto model = index::build_index(eval::generate_synthetic(sc).listings, 1);

  const auto t0 = std::chrono::steady_clock::now();
  auto out = index::index_all_buildings(model, parsed.buildings, index::Strategy::NodeMedian);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = static_cast<double>(out.size()) / secs;
  c.note << static_cast<long>(rate) << " buildings/s (" << model.som().nodes() << " nodes)";
  c.expect(out.size() == parsed.buildings.size(), "one estimate per building");
  c.expect(rate >= 10000, "throughput >= 10000/s");
}

// ---------------------------------------------------------------- analytics

bool brute_match(const CleanListing& l, const analytics::MarketQuery& q) {
  return l.rooms >= q.min_rooms && l.living_space_m2 >= q.min_living_space_m2 && l.gross_rent_chf <= q.max_rent_chf &&
         q.period.contains(l.snapshot_date) && (q.zips.empty() || q.zips.count(l.zip));
}

analytics::MarketQuery random_query(Rng& rng) {
  analytics::MarketQuery q;
  q.min_rooms = 1 + 0.5 * static_cast<double>(rng.index(8));
  q.min_living_space_m2 = 20 + 10 * static_cast<double>(rng.index(10));
  q.max_rent_chf = 1000 + 250 * static_cast<double>(rng.index(20));
  q.period = {Date{2016, 6, 1}.plus_days(static_cast<long>(rng.index(10))),
              Date{2016, 6, 12}.plus_days(static_cast<long>(rng.index(19)))};
  return q;
}

void analytics_criterion(Checker& c) {
  const auto ls = avm::testing::random_listings(10000, 1400, 20, 30);
  Rng rng(1401);
  std::vector<double> budgets;
  for (int b = 500; b <= 7000; b += 500) budgets.push_back(b);

  for (int t = 0; t < 100; ++t) {
    const auto q = random_query(rng);
    auto za = analytics::zip_availability(ls, q);
    std::map<int, std::pair<int, int>> expect;
    for (auto& l : ls) {
      if (!q.period.contains(l.snapshot_date)) continue;
      auto& e = expect[l.zip];
      ++e.first;
      e.second += brute_match(l, q);
    }
    c.expect(za.size() == expect.size(), "zip set");
    for (auto& [zip, e] : expect) {
      const auto& s = za.at(zip);
      c.expect(s.n_total == e.first && s.n_match == e.second && *s.pct == 100.0 * e.second / e.first,
               "zip availability " + std::to_string(zip));
    }

    const int zip = 8000 + static_cast<int>(rng.index(20));
    auto curve = analytics::budget_sweep(ls, zip, q.min_rooms, q.min_living_space_m2, budgets, q.period);
    int n_total = 0;
    for (auto& l : ls) n_total += l.zip == zip && q.period.contains(l.snapshot_date);
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      int m = 0;
      for (auto& l : ls)
        m += l.zip == zip && q.period.contains(l.snapshot_date) && l.rooms >= q.min_rooms &&
             l.living_space_m2 >= q.min_living_space_m2 && l.gross_rent_chf <= budgets[i];
      c.expect(curve.pct_matched.at(i) == 100.0 * m / n_total, "budget point");
      if (i) c.expect(curve.pct_matched[i] >= curve.pct_matched[i - 1], "curve monotone");
    }

    auto h = analytics::match_histograms(ls, zip, q, 20);
    std::vector<const CleanListing*> pop;
    for (auto& l : ls)
      if (l.zip == zip && q.period.contains(l.snapshot_date)) pop.push_back(&l);
    auto field = [](const CleanListing& l, int d) {
      return d == 0 ? l.rooms : d == 1 ? l.living_space_m2 : l.gross_rent_chf;
    };
    for (int d = 0; d < 3; ++d) {
      double lo = 1e300, hi = -1e300;
      for (auto* l : pop) lo = std::min(lo, field(*l, d)), hi = std::max(hi, field(*l, d));
      if (hi == lo) hi = lo + 1;
      std::vector<int> tot(20), mat(20);
      for (auto* l : pop) {
        int b = static_cast<int>((field(*l, d) - lo) / (hi - lo) * 20);
        b = std::clamp(b, 0, 19);
        ++tot[static_cast<std::size_t>(b)];
        if (brute_match(*l, q)) ++mat[static_cast<std::size_t>(b)];
      }
      c.expect(h.dims[static_cast<std::size_t>(d)].total_counts == tot, "histogram totals");
      c.expect(h.dims[static_cast<std::size_t>(d)].matched_counts == mat, "histogram matched");
    }

    auto loose = q;
    loose.min_rooms = std::max(0.5, q.min_rooms - 0.5 * static_cast<double>(rng.index(3)));
    loose.min_living_space_m2 = std::max(1.0, q.min_living_space_m2 - 5 * static_cast<double>(rng.index(4)));
    loose.max_rent_chf = q.max_rent_chf + 100 * static_cast<double>(rng.index(10));
    auto zl = analytics::zip_availability(ls, loose);
    for (auto& [z, s] : za) c.expect(zl.at(z).n_match >= s.n_match && *zl.at(z).pct >= *s.pct, "relaxation dominance");
  }
}

// ---------------------------------------------------------------- OSM

long status_kb(const char* key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::string k = key;
  while (std::getline(in, line))
    if (line.rfind(k, 0) == 0) return std::stol(line.substr(k.size() + 1));
  return -1;
}

void osm_criterion(Checker& c) {
  const std::string head = "<?xml version='1.0'?><osm version='0.6'>"
                           "<node id='1' lat='47.0' lon='8.0'/><node id='2' lat='47.0' lon='8.001'/>"
                           "<node id='3' lat='47.001' lon='8.001'/><node id='4' lat='47.001' lon='8.0'/>";
  auto parse = [](const std::string& xml) {
    std::istringstream in(xml);
    return osm::parse_osm_buildings(in);
  };
  auto sq = parse(head + "<way id='9'><nd ref='1'/><nd ref='2'/><nd ref='3'/><nd ref='4'/><nd ref='1'/>"
                         "<tag k='building' v='yes'/></way></osm>");
  c.expect(sq.buildings.size() == 1, "square parsed");
  if (!sq.buildings.empty()) {
    c.expect(std::abs(sq.buildings[0].centroid_lat - 47.0005) < 1e-9, "square lat");
    c.expect(std::abs(sq.buildings[0].centroid_lng - 8.0005) < 1e-9, "square lng");
  }
  auto dangling = parse(head + "<way id='9'><nd ref='1'/><nd ref='2'/><nd ref='77'/><nd ref='4'/><nd ref='1'/>"
                               "<tag k='building' v='yes'/></way></osm>");
  c.expect(dangling.buildings.empty() && dangling.stats.dangling == 1, "dangling ref");
  auto no = parse(head + "<way id='9'><nd ref='1'/><nd ref='2'/><nd ref='3'/><nd ref='4'/><nd ref='1'/>"
                         "<tag k='building' v='no'/></way></osm>");
  c.expect(no.buildings.empty() && no.stats.building_ways == 0, "building=no");

  avm::testing::TempDir dir("accept_osm");
  const auto path = dir.path() / "big.osm";
  {
    std::ostringstream probe;
    osm::write_synthetic_extract(probe, 1000, 3);
    const double per = static_cast<double>(probe.str().size()) / 1000.0;
    const auto n = static_cast<std::size_t>(std::ceil(100.0 * 1024 * 1024 / per));
    std::ofstream out(path);
    osm::write_synthetic_extract(out, n, 3);
  }
  const auto bytes = std::filesystem::file_size(path);
  {
    std::ofstream reset("/proc/self/clear_refs");
    reset << "5";
  }
  const long rss_before = status_kb("VmRSS:");
  std::ifstream in(path, std::ios::binary);
  std::size_t count = 0;
  auto stats = osm::parse_osm_buildings(in, [&](osm::Building&&) { ++count; });
  const long hwm = status_kb("VmHWM:");
  const double table_kb = static_cast<double>(stats.node_table_bytes) / 1024.0;
  c.note << (bytes >> 20) << " MB, " << count << " buildings, peak RSS " << (hwm >> 10) << " MB (before "
         << (rss_before >> 10) << " MB), node table " << static_cast<long>(table_kb) / 1024 << " MB";
  c.expect(bytes >= 100ull * 1024 * 1024, "extract >= 100 MB");
  c.expect(count == stats.buildings && count > 0, "streamed buildings");
  c.expect(hwm > 0 && static_cast<double>(hwm) < 10 * table_kb, "peak RSS < 10x node table");
}

// ---------------------------------------------------------------- service

void service_criterion(Checker& c) {
  avm::testing::TempDir dir("accept_service");
  eval::SyntheticConfig sc;
  sc.n = 800;
  sc.seed = 9;
  sc.noise_sd_chf = 100;
  sc.city_centers = eval::default_city_centers();
  const auto listings = eval::generate_synthetic(sc).listings;
  const auto xy = eval::to_xy(eval::encode_all(listings));
  const std::vector<std::string> names(ingest::kFeatureNames.begin(), ingest::kFeatureNames.end());
  const auto rf = regress::fit(regress::Algo::Rf, xy.x, xy.y, 3, names);
  const auto idx = index::build_index(listings, grid(6, 6));
  {
    std::ofstream(dir.path() / "rf.json") << regress::to_json(rf).dump();
    std::ofstream(dir.path() / "index.json") << index::to_json(idx).dump();
  }
  // The server reads models back from disk, so compare against the same bytes.
  const auto rf_disk = regress::model_from_json(json::parse(std::ifstream(dir.path() / "rf.json")));
  const auto idx_disk = index::price_index_from_json(json::parse(std::ifstream(dir.path() / "index.json")));

  service::ServerConfig cfg;
  cfg.port = 0;
  cfg.store_dir = dir.path() / "store";
  cfg.model_files = {{regress::Algo::Rf, dir.path() / "rf.json"}};
  cfg.index_file = dir.path() / "index.json";
  service::ApiServer server(cfg);
  const auto summary = store::append_by_date(server.store(), listings);
  c.expect(summary.added == listings.size(), "store append");
  const int port = server.bind();
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(30, 0);

  auto get = [&](const std::string& p) {
    auto r = cli.Get(p);
    return r && r->status == 200 ? json::parse(r->body) : json();
  };
  auto post = [&](const std::string& p, const json& b) {
    auto r = cli.Post(p, b.dump(), "application/json");
    return r && r->status == 200 ? json::parse(r->body) : json();
  };

  Rng rng(10);
  for (int q = 0; q < 20; ++q) {
    const auto& l = listings[rng.index(listings.size())];
    std::ostringstream url;
    url.precision(17);
    url << "/api/v1/estimate?type=apartment&rooms=" << l.rooms << "&floor=" << l.floor
        << "&space=" << l.living_space_m2 << "&year=" << l.year_built << "&zip=" << l.zip << "&lng=" << l.lng
        << "&lat=" << l.lat << "&model=rf";
    auto j = get(url.str());
    auto probe = l;
    probe.property_type = PropertyType::Apartment;
    const double lib = rf_disk.predict(ingest::encode_features(probe).values);
    c.expect(j.is_object() && j["estimate_chf"].get<double>() == lib, "estimate agreement");

    std::ostringstream iu;
    iu.precision(17);
    iu << "/api/v1/index?lat=" << l.lat << "&lng=" << l.lng << "&strategy=median";
    auto ij = get(iu.str());
    auto e = index::estimate_index(idx_disk, l.lat, l.lng, idx_disk.k_default(), index::Strategy::NodeMedian);
    c.expect(ij.is_object() && ij["price_per_m2"].get<double>() == e.price_per_m2 && ij["n_support"] == e.n_support,
             "index agreement");
  }

  const Period june{{2016, 6, 1}, {2016, 6, 30}};
  const auto rows = server.store().query_listings(june, {}, OfferKind::Rent);
  json query = {{"min_rooms", 3}, {"min_living_space_m2", 50}, {"max_rent_chf", 3000},
                {"period", {{"start", "2016-06-01"}, {"end", "2016-06-30"}}}};
  const auto mq = analytics::query_from_json(query);
  c.expect(post("/api/v1/analytics/zip-availability", {{"query", query}}) ==
               analytics::to_json(analytics::zip_availability(rows, mq)),
           "zip availability agreement");
  const int zip = rows.front().zip;
  const std::vector<double> budgets = {1500, 2500, 3500};
  c.expect(post("/api/v1/analytics/budget-sweep",
                {{"zip", zip}, {"min_rooms", 2}, {"min_space", 50}, {"budgets", budgets}}) ==
               analytics::to_json(analytics::budget_sweep(rows, zip, 2, 50, budgets)),
           "budget sweep agreement");
  c.expect(post("/api/v1/analytics/histograms", {{"zip", zip}, {"query", query}}) ==
               analytics::to_json(analytics::match_histograms(rows, zip, mq)),
           "histogram agreement");

  const auto day = listings.front().snapshot_date;
  std::vector<CleanListing> same_day;
  for (auto& l : listings)
    if (l.snapshot_date == day) same_day.push_back(l);
  same_day.front().gross_rent_chf += 10;
  bool conflict = false;
  try {
    server.store().append_snapshot(day, same_day);
  } catch (const ConflictError&) {
    conflict = true;
  }
  c.expect(conflict, "conflicting re-append rejected");

  auto exported = cli.Get("/api/v1/listings/export?from=2016-06-01&to=2016-06-30&format=jsonl");
  c.expect(exported && exported->status == 200, "export status");
  if (exported) {
    std::istringstream in(exported->body);
    auto parsed = ingest::parse_listings(in, ingest::Format::JsonLines);
    std::vector<CleanListing> back;
    for (auto& r : parsed.listings)
      if (auto v = ingest::validate(r); std::holds_alternative<CleanListing>(v)) back.push_back(std::get<CleanListing>(v));
    c.expect(parsed.errors.empty() && back == server.store().query_listings(june), "export round trip");
    avm::testing::TempDir dir2("accept_service_reingest");
    store::SnapshotStore again(dir2.path());
    store::append_by_date(again, back);
    c.expect(again.dedup_index() == server.store().dedup_index(), "re-ingest dedup index");
  }
  server.stop();
  t.join();
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"metric exactness", 1, metric},
      {"KNN oracle equivalence", 5, knn_oracle},
      {"OLS oracle", 5, ols_oracle},
      {"Bayesian ridge", 10, bayes_ridge},
      {"random forest sanity", 10, forest},
      {"local polynomial exactness", 10, local_poly},
      {"benchmark ordering", 180, benchmark_ordering},
      {"SOM properties", 30, som_criterion},
      {"spatial index", 30, index_criterion},
      {"bulk indexing throughput", 60, throughput},
      {"analytics oracle", 30, analytics_criterion},
      {"OSM parser", 120, osm_criterion},
      {"service round trip", 60, service_criterion},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Checker c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.budget_s) c.failures.push_back("over time budget");
    const bool ok = c.failures.empty();
    failed += !ok;
    std::printf("%s  %-28s %8.2fs / %4.0fs", ok ? "PASS" : "FAIL", cr.name.c_str(), secs, cr.budget_s);
    if (!c.note.str().empty()) std::printf("  [%s]", c.note.str().c_str());
    for (const auto& f : c.failures) std::printf("\n      - %s", f.c_str());
    std::printf("\n");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
