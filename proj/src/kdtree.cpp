#include "avm/kdtree.hpp"

#include <algorithm>

namespace avm {

KdTree2::KdTree2(std::vector<Point> points) : points_(std::move(points)) {
  std::vector<std::size_t> idx(points_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, idx.size(), 0);
}

int KdTree2::build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 2;
  const std::size_t mid = lo + (hi - lo) / 2;
  auto key = [&](std::size_t i) { return axis == 0 ? points_[i].x : points_[i].y; };
  std::nth_element(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(mid),
                   idx.begin() + static_cast<std::ptrdiff_t>(hi),
                   [&](std::size_t a, std::size_t b) { return std::pair(key(a), a) < std::pair(key(b), b); });
  const int me = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis});
  const int l = build(idx, lo, mid, depth + 1);
  const int r = build(idx, mid + 1, hi, depth + 1);
  nodes_[static_cast<std::size_t>(me)].left = l;
  nodes_[static_cast<std::size_t>(me)].right = r;
  return me;
}

void KdTree2::search(int node, double x, double y, std::size_t k, std::vector<Candidate>& heap) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const Point& p = points_[n.point];
  const double dx = p.x - x, dy = p.y - y;
  const Candidate cand{dx * dx + dy * dy, n.point};
  if (heap.size() < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end());
  } else if (cand < heap.front()) {
    std::pop_heap(heap.begin(), heap.end());
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end());
  }
  const double diff = n.axis == 0 ? x - p.x : y - p.y;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, x, y, k, heap);
  // Equal distance must still be explored: a lower index may tie.
  if (heap.size() < k || diff * diff <= heap.front().first) search(far, x, y, k, heap);
}

void KdTree2::knn(double x, double y, std::size_t k, std::vector<std::size_t>& out) const {
  out.clear();
  if (k == 0 || points_.empty()) return;
  k = std::min(k, points_.size());
  std::vector<Candidate> heap;
  heap.reserve(k + 1);
  search(root_, x, y, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  for (auto& c : heap) out.push_back(c.second);
}

}  // namespace avm
