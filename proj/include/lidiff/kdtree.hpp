#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

namespace lidiff {

/// Exact 3-D kd-tree over a fixed point set. Stores indices only; the caller
/// keeps the coordinate array alive for the tree's lifetime.
class KdTree3 {
 public:
  using Vec3 = std::array<double, 3>;

  struct Neighbor {
    double dist2;
    std::size_t index;
    bool operator<(const Neighbor& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  explicit KdTree3(std::span<const Vec3> points) : points_(points), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) root_ = build(0, order_.size(), 0);
  }

  /// k nearest points to `query`, nearest first, skipping index `exclude`.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k,
                            std::size_t exclude = static_cast<std::size_t>(-1)) const {
    std::priority_queue<Neighbor> heap;  // max-heap on distance
    if (root_ >= 0 && k > 0) knn_rec(root_, query, k, exclude, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

  /// All points within `radius` (inclusive) of `query`, in ascending index order.
  std::vector<Neighbor> radius_search(const Vec3& query, double radius) const {
    std::vector<Neighbor> out;
    if (root_ >= 0) radius_rec(root_, query, radius * radius, out);
    std::sort(out.begin(), out.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
    return out;
  }

 private:
  struct Node {
    std::size_t point;
    int axis;
    int left = -1;
    int right = -1;
  };

  static double dist2(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
  }

  int build(std::size_t lo, std::size_t hi, int depth) {
    if (lo >= hi) return -1;
    // split on the axis of largest extent
    Vec3 mn = points_[order_[lo]], mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      for (int a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], points_[order_[i]][a]);
        mx[a] = std::max(mx[a], points_[order_[i]][a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) {
                       return points_[a][axis] < points_[b][axis] ||
                              (points_[a][axis] == points_[b][axis] && a < b);
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{order_[mid], axis});
    const int l = build(lo, mid, depth + 1);
    const int r = build(mid + 1, hi, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void knn_rec(int id, const Vec3& q, std::size_t k, std::size_t exclude,
               std::priority_queue<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    const Vec3& p = points_[n.point];
    if (n.point != exclude) {
      Neighbor cand{dist2(p, q), n.point};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (cand < heap.top()) {
        heap.pop();
        heap.push(cand);
      }
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    if (near >= 0) knn_rec(near, q, k, exclude, heap);
    if (far >= 0 && (heap.size() < k || diff * diff <= heap.top().dist2))
      knn_rec(far, q, k, exclude, heap);
  }

  void radius_rec(int id, const Vec3& q, double r2, std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    const Vec3& p = points_[n.point];
    const double d2 = dist2(p, q);
    if (d2 <= r2) out.push_back({d2, n.point});
    const double diff = q[n.axis] - p[n.axis];
    if (n.left >= 0 && (diff < 0 || diff * diff <= r2)) radius_rec(n.left, q, r2, out);
    if (n.right >= 0 && (diff >= 0 || diff * diff <= r2)) radius_rec(n.right, q, r2, out);
  }

  std::span<const Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace lidiff
