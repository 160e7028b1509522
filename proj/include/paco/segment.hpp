#pragma once

#include <vector>

#include "paco/geom.hpp"
#include "paco/primitive.hpp"

namespace paco::segment {

struct Segment {
  CartesianPlaned plane;
  std::vector<int> members;  // sorted point indices
};

/// Planar segments of a cloud plus the points no segment claimed. Every
/// index appears exactly once across segments and `unassigned`.
struct Segmentation {
  std::vector<Segment> segments;
  std::vector<int> unassigned;

  /// Segment index per point, -1 for unassigned.
  std::vector<int> labels(std::size_t point_count) const;
  std::size_t assigned_count() const;
};

struct RegionGrowingParams {
  double angle_tol_deg = 10.0;
  double dist_tol = 0.01;
  int min_support = 20;
  int k = 16;
  /// Points rougher than this (smallest PCA eigenvalue over trace) never seed.
  double max_seed_curvature = 0.005;
};

/// Total-least-squares plane through the points, canonicalized.
/// Throws RankDeficient for fewer than 3 points or collinear input.
CartesianPlaned refit_plane(const PointList& points);
CartesianPlaned refit_plane(const PointList& points, const std::vector<int>& subset);

struct PointNormals {
  PointList normals;               // unit, sign arbitrary
  std::vector<double> curvature;   // smallest eigenvalue / trace
};

/// PCA normals over k-nearest-neighbor neighborhoods (point included).
PointNormals estimate_normals(const PointList& points, int k);

/// Region growing over the k-NN graph, seeded from the flattest points,
/// followed by distance-only absorption of leftovers into adjacent segments.
Segmentation detect_planes(const PointList& points, const RegionGrowingParams& params = {});

/// One primitive per segment, inliers projected onto the segment plane.
PrimitiveList to_primitives(const Segmentation& seg, const PointList& points);

}  // namespace paco::segment
