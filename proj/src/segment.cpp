#include "paco/segment.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>

#include "paco/spatial.hpp"

namespace paco::segment {

namespace {

struct PcaResult {
  Point3 centroid;
  Eigen::Vector3d eigenvalues;  // ascending
  Eigen::Matrix3d eigenvectors;
};

template <typename IndexRange>
PcaResult pca(const PointList& points, const IndexRange& idx) {
  PcaResult out;
  out.centroid.setZero();
  std::size_t count = 0;
  for (int i : idx) {
    out.centroid += points[i];
    ++count;
  }
  out.centroid /= static_cast<double>(count);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (int i : idx) {
    const Point3 d = points[i] - out.centroid;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(count);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  out.eigenvalues = solver.eigenvalues();
  out.eigenvectors = solver.eigenvectors();
  return out;
}

CartesianPlaned plane_from_pca(const PcaResult& p) {
  const Point3 n = p.eigenvectors.col(0).normalized();
  return canonicalize(CartesianPlaned{n, n.dot(p.centroid)});
}

}  // namespace

std::vector<int> Segmentation::labels(std::size_t point_count) const {
  std::vector<int> out(point_count, -1);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (int i : segments[s].members) out[i] = static_cast<int>(s);
  }
  return out;
}

std::size_t Segmentation::assigned_count() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.members.size();
  return n;
}

CartesianPlaned refit_plane(const PointList& points, const std::vector<int>& subset) {
  if (subset.size() < 3) throw Error(ErrorCode::RankDeficient, "fewer than 3 points");
  const PcaResult p = pca(points, subset);
  const double scale = std::max(p.eigenvalues(2), 1e-300);
  if (p.eigenvalues(1) <= 1e-12 * scale || p.eigenvalues(2) <= 1e-300) {
    throw Error(ErrorCode::RankDeficient, "points are collinear or coincident");
  }
  return plane_from_pca(p);
}

CartesianPlaned refit_plane(const PointList& points) {
  std::vector<int> all(points.size());
  std::iota(all.begin(), all.end(), 0);
  return refit_plane(points, all);
}

PointNormals estimate_normals(const PointList& points, int k) {
  PointNormals out;
  out.normals.resize(points.size(), Point3::UnitZ());
  out.curvature.resize(points.size(), 1.0);
  const KdTree tree(points);
  std::vector<int> idx;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nbrs = tree.knn(points[i], k + 1);
    idx.clear();
    for (const auto& nb : nbrs) idx.push_back(nb.index);
    if (idx.size() < 3) continue;
    const PcaResult p = pca(points, idx);
    const double trace = p.eigenvalues.sum();
    out.normals[i] = p.eigenvectors.col(0).normalized();
    out.curvature[i] = trace > 0 ? p.eigenvalues(0) / trace : 1.0;
  }
  return out;
}

Segmentation detect_planes(const PointList& points, const RegionGrowingParams& params) {
  Segmentation seg;
  const int n = static_cast<int>(points.size());
  if (n == 0) return seg;
  const auto graph = knn_graph(points, params.k);
  const PointNormals normals = estimate_normals(points, params.k);
  const double cos_tol = std::cos(params.angle_tol_deg * std::numbers::pi / 180.0);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return normals.curvature[a] < normals.curvature[b]; });

  std::vector<int> owner(n, -1);
  std::vector<int> visit_stamp(n, -1);
  int stamp = 0;

  for (int seed : order) {
    if (normals.curvature[seed] > params.max_seed_curvature) break;
    if (owner[seed] >= 0) continue;
    ++stamp;
    CartesianPlaned plane{normals.normals[seed], normals.normals[seed].dot(points[seed])};
    std::vector<int> region{seed};
    visit_stamp[seed] = stamp;
    std::size_t fitted_at = 1;
    std::deque<int> frontier{seed};
    while (!frontier.empty()) {
      const int cur = frontier.front();
      frontier.pop_front();
      for (int nb : graph[cur]) {
        if (owner[nb] >= 0 || visit_stamp[nb] == stamp) continue;
        if (std::abs(normals.normals[nb].dot(plane.n)) < cos_tol) continue;
        if (std::abs(signed_distance(plane, points[nb])) >= params.dist_tol) continue;
        visit_stamp[nb] = stamp;
        region.push_back(nb);
        frontier.push_back(nb);
        if (region.size() >= 2 * fitted_at && region.size() >= 10) {
          fitted_at = region.size();
          try {
            plane = refit_plane(points, region);
          } catch (const Error&) {
            // Collinear so far; keep growing with the seed plane.
          }
        }
      }
    }
    if (static_cast<int>(region.size()) < params.min_support) continue;

    // Final refit; members that drift past the tolerance are released.
    try {
      plane = refit_plane(points, region);
    } catch (const Error&) {
      continue;
    }
    std::vector<int> members;
    for (int i : region) {
      if (std::abs(signed_distance(plane, points[i])) < params.dist_tol) members.push_back(i);
    }
    if (static_cast<int>(members.size()) < params.min_support) continue;
    std::sort(members.begin(), members.end());
    const int id = static_cast<int>(seg.segments.size());
    for (int i : members) owner[i] = id;
    seg.segments.push_back({plane, std::move(members)});
  }

  // Absorb leftovers (mostly edge points with blended normals) into an
  // adjacent segment whose plane still fits them. Repeats until stable.
  bool grew = true;
  while (grew) {
    grew = false;
    for (int i = 0; i < n; ++i) {
      if (owner[i] >= 0) continue;
      int best = -1;
      double best_dist = params.dist_tol;
      for (int nb : graph[i]) {
        const int s = owner[nb];
        if (s < 0 || s == best) continue;
        const auto& pl = seg.segments[s].plane;
        const double d = std::abs(signed_distance(pl, points[i]));
        if (d < best_dist || (d == best_dist && best >= 0 && s < best)) {
          best = s;
          best_dist = d;
        }
      }
      if (best >= 0) {
        owner[i] = best;
        seg.segments[best].members.push_back(i);
        grew = true;
      }
    }
  }
  for (auto& sg : seg.segments) std::sort(sg.members.begin(), sg.members.end());
  for (int i = 0; i < n; ++i) {
    if (owner[i] < 0) seg.unassigned.push_back(i);
  }
  return seg;
}

PrimitiveList to_primitives(const Segmentation& seg, const PointList& points) {
  PrimitiveList out;
  for (const auto& segment : seg.segments) {
    PlanePrimitive p;
    p.plane = cartesian_to_polar(segment.plane).plane;
    const CartesianPlaned c = p.cartesian();
    for (int i : segment.members) {
      const Point3& x = points[static_cast<std::size_t>(i)];
      p.points.push_back(x - signed_distance(c, x) * c.n);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace paco::segment
