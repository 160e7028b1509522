#pragma once

#include <vector>

#include "paco/geom.hpp"

namespace paco {

/// A plane with its inlier points and a selection confidence.
struct PlanePrimitive {
  PolarPlaned plane;
  PointList points;
  double confidence = 1.0;

  CartesianPlaned cartesian() const { return polar_to_cartesian(plane); }
  Point3 normal() const { return spherical_direction(plane.theta, plane.phi); }
};

using PrimitiveList = std::vector<PlanePrimitive>;

}  // namespace paco
