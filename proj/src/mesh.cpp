#include "paco/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace paco {

double polygon_area(const PointList& vertices, const std::vector<int>& face) {
  if (face.size() < 3) return 0.0;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  const Point3& origin = vertices[face[0]];
  for (std::size_t i = 1; i + 1 < face.size(); ++i) {
    acc += (vertices[face[i]] - origin).cross(vertices[face[i + 1]] - origin);
  }
  return 0.5 * acc.norm();
}

double surface_area(const PolyMesh& mesh) {
  double total = 0.0;
  for (const auto& f : mesh.faces) total += polygon_area(mesh.vertices, f);
  return total;
}

std::vector<Triangle> triangulate(const PolyMesh& mesh, std::vector<int>* triangle_face) {
  std::vector<Triangle> tris;
  if (triangle_face) triangle_face->clear();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (std::size_t i = 1; i + 1 < face.size(); ++i) {
      tris.push_back({face[0], face[i], face[i + 1]});
      if (triangle_face) triangle_face->push_back(static_cast<int>(f));
    }
  }
  return tris;
}

bool is_watertight(const PolyMesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& face : mesh.faces) {
    if (face.size() < 3) return false;
    for (std::size_t i = 0; i < face.size(); ++i) {
      const int a = face[i];
      const int b = face[(i + 1) % face.size()];
      if (a == b) return false;
      if (++directed[{a, b}] > 1) return false;
    }
  }
  for (const auto& [edge, count] : directed) {
    auto it = directed.find({edge.second, edge.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return !directed.empty();
}

double max_planarity_error(const PolyMesh& mesh) {
  double worst = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int v : mesh.faces[f]) {
      worst = std::max(worst, std::abs(signed_distance(mesh.face_planes[f], mesh.vertices[v])));
    }
  }
  return worst;
}

BoundingBox bounding_box(const PointList& points) {
  BoundingBox box{points.front(), points.front()};
  for (const auto& p : points) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  return box;
}

PolyMesh make_box(const Point3& h) {
  PolyMesh mesh;
  for (int i = 0; i < 8; ++i) {
    mesh.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(),
                               (i & 4) ? h.z() : -h.z());
  }
  // Counter-clockwise seen from outside.
  mesh.faces = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  mesh.face_planes = {{-Point3::UnitX(), h.x()}, {Point3::UnitX(), h.x()},
                      {-Point3::UnitY(), h.y()}, {Point3::UnitY(), h.y()},
                      {-Point3::UnitZ(), h.z()}, {Point3::UnitZ(), h.z()}};
  return mesh;
}

}  // namespace paco
