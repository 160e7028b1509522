#include "paco/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "paco/error.hpp"
#include "paco/polygon.hpp"

namespace paco::assembly {

namespace {

constexpr int kDilationDirections = 16;

struct Interval {
  double lo, hi;
};

// Extent along `dir` of the segment where the loop crosses plane (n, d).
std::optional<Interval> crossing(const PointList& loop, const Point3& n, double d, const Point3& dir) {
  std::optional<Interval> out;
  auto extend = [&](const Point3& x) {
    const double t = dir.dot(x);
    if (!out) out = Interval{t, t};
    out->lo = std::min(out->lo, t);
    out->hi = std::max(out->hi, t);
  };
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Point3& a = loop[i];
    const Point3& b = loop[(i + 1) % loop.size()];
    const double da = n.dot(a) - d, db = n.dot(b) - d;
    if (da == 0) extend(a);
    if ((da < 0 && db > 0) || (da > 0 && db < 0)) extend(a + da / (da - db) * (b - a));
  }
  return out;
}

}  // namespace

Polygon polygonize_primitive(const PlanePrimitive& p) {
  if (p.points.size() < 3) throw Error(ErrorCode::DegenerateFootprint, "fewer than 3 inliers");
  Polygon poly;
  poly.plane = p.cartesian();
  poly.confidence = p.confidence;
  const PlaneFrame frame = plane_frame(poly.plane);
  std::vector<Eigen::Vector2d> local;
  local.reserve(p.points.size());
  poly.centroid = Point3::Zero();
  for (const auto& x : p.points) {
    local.push_back(frame.to_local(x));
    poly.centroid += x;
  }
  poly.centroid /= static_cast<double>(p.points.size());
  const auto hull = convex_hull_2d(local);
  double extent = 0;
  for (const auto& q : local) extent = std::max(extent, (q - local.front()).norm());
  if (hull.size() < 3 || polygon_area_2d(hull) <= 1e-12 * extent * extent)
    throw Error(ErrorCode::DegenerateFootprint, "inliers are collinear on their plane");
  for (const auto& q : hull) poly.loop.push_back(frame.to_world(q));
  return poly;
}

Polygon dilate(const Polygon& poly, double margin) {
  if (margin <= 0) return poly;
  const PlaneFrame frame = plane_frame(poly.plane);
  std::vector<Eigen::Vector2d> grown;
  for (const auto& x : poly.loop) {
    const Eigen::Vector2d q = frame.to_local(x);
    for (int k = 0; k < kDilationDirections; ++k) {
      const double a = 2.0 * std::numbers::pi * k / kDilationDirections;
      grown.push_back(q + margin * Eigen::Vector2d(std::cos(a), std::sin(a)));
    }
  }
  Polygon out = poly;
  out.loop.clear();
  for (const auto& q : convex_hull_2d(grown)) out.loop.push_back(frame.to_world(q));
  return out;
}

std::vector<Polygon> clip_mutual(const std::vector<Polygon>& polygons, double min_dihedral_deg) {
  const double max_cos = std::cos(min_dihedral_deg * std::numbers::pi / 180.0);
  std::vector<Polygon> out;
  for (std::size_t i = 0; i < polygons.size(); ++i) {
    const Polygon& pi = polygons[i];
    PointList loop = pi.loop;
    for (std::size_t j = 0; j < polygons.size() && !loop.empty(); ++j) {
      if (j == i) continue;
      const Polygon& pj = polygons[j];
      const Point3 ni = pi.plane.n.normalized(), nj = pj.plane.n.normalized();
      if (std::abs(ni.dot(nj)) >= max_cos) continue;
      // Neighbors: each footprint crosses the other's plane on overlapping spans.
      const Point3 dir = ni.cross(nj).normalized();
      const auto a = crossing(pi.loop, nj, pj.plane.d, dir);
      const auto b = crossing(pj.loop, ni, pi.plane.d, dir);
      if (!a || !b || a->hi < b->lo || b->hi < a->lo) continue;
      const double side = nj.dot(pi.centroid) - pj.plane.d;
      if (side == 0) continue;
      loop = side < 0 ? clip_polygon(loop, nj, pj.plane.d) : clip_polygon(loop, -nj, -pj.plane.d);
    }
    if (loop.size() >= 3) {
      Polygon clipped = pi;
      clipped.loop = std::move(loop);
      out.push_back(std::move(clipped));
    }
  }
  return out;
}

Assembly assemble_mesh(const PrimitiveList& primitives, const AssemblyParams& params) {
  if (primitives.empty()) throw Error(ErrorCode::EmptySelection, "no primitives selected");
  std::vector<Polygon> polys;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    try {
      Polygon p = dilate(polygonize_primitive(primitives[i]), params.margin);
      p.source = static_cast<int>(i);
      polys.push_back(std::move(p));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateFootprint) throw;
    }
  }
  if (polys.empty()) throw Error(ErrorCode::DegenerateFootprint, "no primitive has a usable footprint");

  Assembly out;
  PolyMesh& mesh = out.mesh;
  auto weld = [&](const Point3& x) {
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
      if ((mesh.vertices[v] - x).norm() <= params.weld_tolerance) return static_cast<int>(v);
    mesh.vertices.push_back(x);
    return static_cast<int>(mesh.vertices.size()) - 1;
  };
  for (const Polygon& p : clip_mutual(polys, params.min_dihedral_deg)) {
    const PointList loop = simplify_loop(p.loop, 1e-9);
    if (loop.size() < 3) continue;
    std::vector<int> face;
    for (const auto& x : loop) {
      const int v = weld(x);
      if (face.empty() || face.back() != v) face.push_back(v);
    }
    while (face.size() > 1 && face.front() == face.back()) face.pop_back();
    if (face.size() < 3) continue;
    mesh.faces.push_back(std::move(face));
    mesh.face_planes.push_back(p.plane);
    out.face_source.push_back(p.source);
  }
  if (mesh.faces.empty()) throw Error(ErrorCode::EmptyMesh, "clipping removed every face");
  // Drop vertices only referenced by discarded faces.
  std::vector<int> remap(mesh.vertices.size(), -1);
  PointList used;
  for (auto& face : mesh.faces)
    for (int& v : face) {
      if (remap[static_cast<std::size_t>(v)] < 0) {
        remap[static_cast<std::size_t>(v)] = static_cast<int>(used.size());
        used.push_back(mesh.vertices[static_cast<std::size_t>(v)]);
      }
      v = remap[static_cast<std::size_t>(v)];
    }
  mesh.vertices = std::move(used);
  out.triangles = triangulate(mesh);
  return out;
}

}  // namespace paco::assembly
