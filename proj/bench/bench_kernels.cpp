// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "avm/eval.hpp"
#include "avm/kernels.hpp"
#include "avm/osm.hpp"
#include "avm/spatial_index.hpp"

#include <sstream>

using namespace avm;

namespace {

RowMatrix random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

kernels::RowsView view(const RowMatrix& m) {
  return {m.data(), static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
}

template <bool Parallel>
void BM_AssignBmu(benchmark::State& state) {
  const auto data = random_rows(static_cast<std::size_t>(state.range(0)), 3, 1);
  const auto code = random_rows(400, 3, 2);
  const std::vector<std::size_t> dims = {0, 1, 2};
  std::vector<std::size_t> bmu(static_cast<std::size_t>(data.rows()));
  std::vector<double> d2(bmu.size());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::assign_bmu(view(data), view(code), dims, bmu, d2);
    else kernels::serial::assign_bmu(view(data), view(code), dims, bmu, d2);
    benchmark::DoNotOptimize(bmu.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_NeighborhoodUpdate(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t nodes = side * side, dim = 3;
  Rng rng(3);
  std::vector<double> sums(nodes * dim), counts(nodes), num(nodes * dim), den(nodes);
  for (auto& s : sums) s = rng.normal();
  for (auto& c : counts) c = static_cast<double>(rng.index(10));
  kernels::NeighborhoodInput in{side, side, dim, side / 4.0, sums, counts};
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::neighborhood_update(in, num, den);
    else kernels::serial::neighborhood_update(in, num, den);
    benchmark::DoNotOptimize(num.data());
  }
}

template <bool Parallel>
void BM_KnnIndices(benchmark::State& state) {
  const auto train = random_rows(static_cast<std::size_t>(state.range(0)), 11, 4);
  const auto queries = random_rows(500, 11, 5);
  std::vector<std::size_t> out(500 * 9);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::knn_indices(view(train), view(queries), 9, out);
    else kernels::serial::knn_indices(view(train), view(queries), 9, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 500);
}

struct IndexFixture {
  index::PriceIndexModel model;
  std::vector<osm::Building> buildings;

  static IndexFixture& get() {
    static IndexFixture f = make();
    return f;
  }
  static IndexFixture make() {
    eval::SyntheticConfig c;
    c.n = 5000;
    c.seed = 1;
    c.noise_sd_chf = 150;
    c.city_centers = eval::default_city_centers();
    auto m = index::build_index(eval::generate_synthetic(c).listings, 1);
    std::stringstream xml;
    osm::write_synthetic_extract(xml, 50000, 2);
    return IndexFixture{std::move(m), osm::parse_osm_buildings(xml).buildings};
  }
};

template <bool Parallel>
void BM_IndexAllBuildings(benchmark::State& state) {
  auto& f = IndexFixture::get();
  for (auto _ : state) {
    auto out = Parallel ? index::index_all_buildings(f.model, f.buildings, index::Strategy::NodeMedian)
                        : index::index_all_buildings_serial(f.model, f.buildings, index::Strategy::NodeMedian);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.buildings.size()));
}

}  // namespace

BENCHMARK(BM_AssignBmu<false>)->Name("assign_bmu/serial")->Arg(20000);
BENCHMARK(BM_AssignBmu<true>)->Name("assign_bmu/parallel")->Arg(20000);
BENCHMARK(BM_NeighborhoodUpdate<false>)->Name("neighborhood_update/serial")->Arg(30);
BENCHMARK(BM_NeighborhoodUpdate<true>)->Name("neighborhood_update/parallel")->Arg(30);
BENCHMARK(BM_KnnIndices<false>)->Name("knn_indices/serial")->Arg(20000);
BENCHMARK(BM_KnnIndices<true>)->Name("knn_indices/parallel")->Arg(20000);
BENCHMARK(BM_IndexAllBuildings<false>)->Name("index_all_buildings/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_IndexAllBuildings<true>)->Name("index_all_buildings/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
