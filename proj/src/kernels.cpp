#include "avm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

namespace avm::kernels {

namespace {

inline void neighborhood_row(const NeighborhoodInput& in, std::size_t v, double* num, double& den) {
  const std::size_t nodes = in.grid_rows * in.grid_cols;
  const double inv2s2 = 1.0 / (2.0 * in.sigma * in.sigma);
  const auto vr = static_cast<double>(v / in.grid_cols);
  const auto vc = static_cast<double>(v % in.grid_cols);
  std::fill(num, num + in.dim, 0.0);
  den = 0;
  for (std::size_t u = 0; u < nodes; ++u) {
    const double cu = in.counts[u];
    if (cu == 0) continue;
    const double dr = static_cast<double>(u / in.grid_cols) - vr;
    const double dc = static_cast<double>(u % in.grid_cols) - vc;
    const double h = std::exp(-(dr * dr + dc * dc) * inv2s2);
    den += h * cu;
    const double* s = in.sums.data() + u * in.dim;
    for (std::size_t k = 0; k < in.dim; ++k) num[k] += h * s[k];
  }
}

}  // namespace

void knn_one(const RowsView& train, const double* x, std::size_t k, std::size_t* out) {
  // Max-heap of the best k (dist, index) pairs; lexicographic order gives
  // the lower-index tie rule.
  std::vector<std::pair<double, std::size_t>> heap;
  heap.reserve(k + 1);
  std::span<const double> xs(x, train.cols);
  for (std::size_t i = 0; i < train.rows; ++i) {
    const double* r = train.row(i);
    double d = 0;
    for (std::size_t c = 0; c < train.cols; ++c) {
      const double t = r[c] - xs[c];
      d += t * t;
    }
    if (heap.size() < k) {
      heap.emplace_back(d, i);
      std::push_heap(heap.begin(), heap.end());
    } else if (std::pair(d, i) < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = {d, i};
      std::push_heap(heap.begin(), heap.end());
    }
  }
  std::sort_heap(heap.begin(), heap.end());
  for (std::size_t j = 0; j < heap.size(); ++j) out[j] = heap[j].second;
}

namespace serial {

void assign_bmu(const RowsView& data, const RowsView& codebook, std::span<const std::size_t> dims,
                std::span<std::size_t> bmu, std::span<double> dist2) {
  for (std::size_t i = 0; i < data.rows; ++i)
    bmu[i] = nearest_row(codebook, data.row(i), dims, dist2.empty() ? nullptr : &dist2[i]);
}

void neighborhood_update(const NeighborhoodInput& in, std::span<double> num, std::span<double> den) {
  const std::size_t nodes = in.grid_rows * in.grid_cols;
  for (std::size_t v = 0; v < nodes; ++v) neighborhood_row(in, v, num.data() + v * in.dim, den[v]);
}

void knn_indices(const RowsView& train, const RowsView& queries, std::size_t k,
                 std::span<std::size_t> out) {
  for (std::size_t q = 0; q < queries.rows; ++q) knn_one(train, queries.row(q), k, out.data() + q * k);
}

}  // namespace serial

namespace parallel {

void assign_bmu(const RowsView& data, const RowsView& codebook, std::span<const std::size_t> dims,
                std::span<std::size_t> bmu, std::span<double> dist2) {
  const auto n = static_cast<std::ptrdiff_t>(data.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    bmu[ui] = nearest_row(codebook, data.row(ui), dims, dist2.empty() ? nullptr : &dist2[ui]);
  }
}

void neighborhood_update(const NeighborhoodInput& in, std::span<double> num, std::span<double> den) {
  const auto nodes = static_cast<std::ptrdiff_t>(in.grid_rows * in.grid_cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t v = 0; v < nodes; ++v) {
    const auto uv = static_cast<std::size_t>(v);
    neighborhood_row(in, uv, num.data() + uv * in.dim, den[uv]);
  }
}

void knn_indices(const RowsView& train, const RowsView& queries, std::size_t k,
                 std::span<std::size_t> out) {
  const auto nq = static_cast<std::ptrdiff_t>(queries.rows);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t q = 0; q < nq; ++q) {
    const auto uq = static_cast<std::size_t>(q);
    knn_one(train, queries.row(uq), k, out.data() + uq * k);
  }
}

}  // namespace parallel

}  // namespace avm::kernels
