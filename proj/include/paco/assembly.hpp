#pragma once

#include <vector>

#include "paco/mesh.hpp"
#include "paco/primitive.hpp"

// Simplified primitive assembly: convex footprints per plane, trimmed against
// neighboring planes, welded into a polygon soup.

namespace paco::assembly {

struct Polygon {
  PointList loop;          // counter-clockwise about plane.n
  CartesianPlaned plane;
  Point3 centroid;         // of the inliers, used to pick clip sides
  double confidence = 1.0;
  int source = -1;         // index of the primitive it came from
};

/// Convex hull of the inliers projected onto the plane. Throws DegenerateFootprint.
Polygon polygonize_primitive(const PlanePrimitive& p);

/// Grows the footprint outward by `margin` so neighbors can meet at their shared edge.
Polygon dilate(const Polygon& poly, double margin);

/// Trims each polygon by the neighbor planes it meets at more than `min_dihedral_deg`.
/// Neighbors are judged on the unclipped inputs, so the result is order independent.
std::vector<Polygon> clip_mutual(const std::vector<Polygon>& polygons, double min_dihedral_deg = 15.0);

struct AssemblyParams {
  double margin = 0.05;
  double min_dihedral_deg = 15.0;
  double weld_tolerance = 1e-6;
};

struct Assembly {
  PolyMesh mesh;
  std::vector<Triangle> triangles;
  std::vector<int> face_source;  // primitive index per mesh face

  int face_count() const { return static_cast<int>(mesh.faces.size()); }
  int vertex_count() const { return static_cast<int>(mesh.vertices.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
};

/// Primitives with degenerate footprints are skipped. Throws EmptySelection on an
/// empty list, DegenerateFootprint when nothing could be polygonized, EmptyMesh when
/// clipping removes every face.
Assembly assemble_mesh(const PrimitiveList& primitives, const AssemblyParams& params = {});

}  // namespace paco::assembly
