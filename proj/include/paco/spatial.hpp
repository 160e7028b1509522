#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "paco/geom.hpp"

namespace paco {

struct Neighbor {
  int index = -1;
  double squared_distance = 0.0;
};

/// Static 3D k-d tree. Queries order candidates by (distance, index), so
/// equidistant neighbors always resolve to the lowest index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Point3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  Neighbor nearest(const Point3& query) const;
  /// Up to k nearest points, closest first.
  std::vector<Neighbor> knn(const Point3& query, int k) const;

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end);
  void search_nearest(int node, const Point3& q, Neighbor& best) const;
  void search_knn(int node, const Point3& q, int k, std::vector<Neighbor>& heap) const;

  std::vector<Point3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Greedy farthest-point sampling starting at index `start`. Ties pick the
/// lowest index. Returns `count` indices (fewer if the input is smaller).
std::vector<int> farthest_point_sampling(std::span<const Point3> points, int count, int start = 0);

/// k nearest neighbors of every point (self excluded), closest first.
std::vector<std::vector<int>> knn_graph(std::span<const Point3> points, int k);

}  // namespace paco
