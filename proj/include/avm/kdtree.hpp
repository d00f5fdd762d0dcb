#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace avm {

/// Static 2-D k-d tree returning the k nearest points ordered by
/// (squared distance, point index), i.e. ties resolve to the lower index
/// exactly as a brute-force scan would.
class KdTree2 {
 public:
  struct Point {
    double x;
    double y;
  };

  KdTree2() = default;
  explicit KdTree2(std::vector<Point> points);

  std::size_t size() const { return points_.size(); }

  /// Writes min(k, size()) indices into `out` (resized), nearest first.
  void knn(double x, double y, std::size_t k, std::vector<std::size_t>& out) const;

 private:
  struct Node {
    std::size_t point;  // index into points_
    int axis;
    int left = -1;
    int right = -1;
  };
  using Candidate = std::pair<double, std::size_t>;

  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth);
  void search(int node, double x, double y, std::size_t k, std::vector<Candidate>& heap) const;

  std::vector<Point> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace avm
