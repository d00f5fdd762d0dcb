#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// `serial::` and an OpenMP version in `parallel::` with identical results
// (every output element is computed independently, so there is no
// reduction-order difference between the two).

#include <cstddef>
#include <span>

namespace avm::kernels {

/// Row-major view over an n x d block of doubles.
struct RowsView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  const double* row(std::size_t i) const { return data + i * cols; }
};

/// Squared Euclidean distance over the listed dimensions only.
inline double masked_dist2(const double* a, const double* b, std::span<const std::size_t> dims) {
  double s = 0;
  for (std::size_t k : dims) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

/// Index of the nearest codebook row under `dims`; ties go to the lowest index.
inline std::size_t nearest_row(const RowsView& codebook, const double* x,
                               std::span<const std::size_t> dims, double* best_d2 = nullptr) {
  std::size_t best = 0;
  double bd = masked_dist2(codebook.row(0), x, dims);
  for (std::size_t u = 1; u < codebook.rows; ++u) {
    const double d = masked_dist2(codebook.row(u), x, dims);
    if (d < bd) {
      bd = d;
      best = u;
    }
  }
  if (best_d2) *best_d2 = bd;
  return best;
}

/// Batch SOM numerator/denominator step: for every node v,
///   num[v] = sum_u h(u,v) * sums[u],   den[v] = sum_u h(u,v) * counts[u]
/// with h(u,v) = exp(-grid_d2(u,v) / (2 sigma^2)).
struct NeighborhoodInput {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t dim = 0;
  double sigma = 1;
  std::span<const double> sums;    // nodes x dim
  std::span<const double> counts;  // nodes
};

namespace serial {
void assign_bmu(const RowsView& data, const RowsView& codebook, std::span<const std::size_t> dims,
                std::span<std::size_t> bmu, std::span<double> dist2);
void neighborhood_update(const NeighborhoodInput& in, std::span<double> num, std::span<double> den);
/// k nearest training rows (ties by lower index) for each query; out is q x k.
void knn_indices(const RowsView& train, const RowsView& queries, std::size_t k,
                 std::span<std::size_t> out);
}  // namespace serial

namespace parallel {
void assign_bmu(const RowsView& data, const RowsView& codebook, std::span<const std::size_t> dims,
                std::span<std::size_t> bmu, std::span<double> dist2);
void neighborhood_update(const NeighborhoodInput& in, std::span<double> num, std::span<double> den);
void knn_indices(const RowsView& train, const RowsView& queries, std::size_t k,
                 std::span<std::size_t> out);
}  // namespace parallel

/// Single-query k-nearest scan used by both batch variants.
void knn_one(const RowsView& train, const double* x, std::size_t k, std::size_t* out);

}  // namespace avm::kernels
