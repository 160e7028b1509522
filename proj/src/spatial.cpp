#include "paco/spatial.hpp"

#include <algorithm>
#include <limits>

namespace paco {

namespace {

constexpr int kLeafSize = 8;

bool closer(const Neighbor& a, const Neighbor& b) {
  if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
  return a.index < b.index;
}

}  // namespace

KdTree::KdTree(std::span<const Point3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<int>(points_.size()));
  }
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = points_[order_[begin]];
  Eigen::Vector3d hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident: keep as leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa != pb ? pa < pb : a < b;
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

Neighbor KdTree::nearest(const Point3& query) const {
  Neighbor best{-1, std::numeric_limits<double>::infinity()};
  if (!points_.empty()) search_nearest(0, query, best);
  return best;
}

void KdTree::search_nearest(int id, const Point3& q, Neighbor& best) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
      if (best.index < 0 || closer(cand, best)) best = cand;
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int first = diff < 0 ? node.left : node.right;
  const int second = diff < 0 ? node.right : node.left;
  search_nearest(first, q, best);
  // Equality must still be visited so index tie-breaking is exact.
  if (diff * diff <= best.squared_distance) search_nearest(second, q, best);
}

std::vector<Neighbor> KdTree::knn(const Point3& query, int k) const {
  std::vector<Neighbor> heap;
  if (points_.empty() || k <= 0) return heap;
  heap.reserve(static_cast<std::size_t>(k) + 1);
  search_knn(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

void KdTree::search_knn(int id, const Point3& q, int k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int first = diff < 0 ? node.left : node.right;
  const int second = diff < 0 ? node.right : node.left;
  search_knn(first, q, k, heap);
  if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().squared_distance) {
    search_knn(second, q, k, heap);
  }
}

std::vector<int> farthest_point_sampling(std::span<const Point3> points, int count, int start) {
  const int n = static_cast<int>(points.size());
  count = std::min(count, n);
  std::vector<int> picked;
  if (count <= 0) return picked;
  picked.reserve(count);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  int current = start;
  for (int s = 0; s < count; ++s) {
    picked.push_back(current);
    const Point3 c = points[current];
    int next = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = (points[i] - c).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best) {
        best = dist[i];
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

std::vector<std::vector<int>> knn_graph(std::span<const Point3> points, int k) {
  const KdTree tree(points);
  std::vector<std::vector<int>> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nbrs = tree.knn(points[i], k + 1);
    out[i].reserve(k);
    for (const Neighbor& nb : nbrs) {
      if (nb.index == static_cast<int>(i)) continue;
      if (static_cast<int>(out[i].size()) == k) break;
      out[i].push_back(nb.index);
    }
  }
  return out;
}

}  // namespace paco
