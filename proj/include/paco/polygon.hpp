#pragma once

#include <vector>

#include "paco/geom.hpp"

namespace paco {

/// Orthonormal in-plane basis (u, v) with u x v = n.
struct PlaneFrame {
  Point3 origin;
  Point3 u;
  Point3 v;
  Point3 n;

  Eigen::Vector2d to_local(const Point3& p) const { return {u.dot(p - origin), v.dot(p - origin)}; }
  Point3 to_world(const Eigen::Vector2d& q) const { return origin + q.x() * u + q.y() * v; }
};

PlaneFrame plane_frame(const CartesianPlaned& plane);

/// Sutherland-Hodgman clip of a planar loop against {x : n.x <= d}.
PointList clip_polygon(const PointList& loop, const Point3& n, double d);

/// Drops consecutive duplicates (within tol) and interior collinear vertices.
PointList simplify_loop(const PointList& loop, double tol);

/// Andrew monotone chain hull, counter-clockwise, collinear points dropped.
std::vector<Eigen::Vector2d> convex_hull_2d(std::vector<Eigen::Vector2d> points);

double polygon_area_2d(const std::vector<Eigen::Vector2d>& loop);

}  // namespace paco
