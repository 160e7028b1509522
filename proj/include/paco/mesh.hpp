#pragma once

#include <array>
#include <vector>

#include "paco/geom.hpp"

namespace paco {

/// Polygon mesh whose faces are planar. face_planes[i] is the supporting
/// plane of faces[i]; for closed shapes the normal points outward.
struct PolyMesh {
  PointList vertices;
  std::vector<std::vector<int>> faces;
  std::vector<CartesianPlaned> face_planes;
};

using Triangle = std::array<int, 3>;

double polygon_area(const PointList& vertices, const std::vector<int>& face);
double surface_area(const PolyMesh& mesh);

/// Fan triangulation from each polygon's first vertex. Entry i of
/// `triangle_face` names the polygon the i-th triangle came from.
std::vector<Triangle> triangulate(const PolyMesh& mesh, std::vector<int>* triangle_face = nullptr);

/// Every undirected edge is used by exactly two faces, once in each direction.
bool is_watertight(const PolyMesh& mesh);

/// Largest |signed distance| of any face vertex from its face plane.
double max_planarity_error(const PolyMesh& mesh);

struct BoundingBox {
  Point3 lo;
  Point3 hi;
  double diagonal() const { return (hi - lo).norm(); }
  Point3 center() const { return 0.5 * (lo + hi); }
};

BoundingBox bounding_box(const PointList& points);

/// Axis-aligned cube centered at the origin with the given side length,
/// outward-oriented quads.
PolyMesh make_box(const Point3& half_extents);

}  // namespace paco
