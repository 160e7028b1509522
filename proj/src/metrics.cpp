#include "paco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paco/error.hpp"
#include "paco/geom.hpp"
#include "paco/matchloss.hpp"
#include "paco/spatial.hpp"
#include "paco/synth.hpp"

namespace paco::metrics {

namespace {

Point3 newell_normal(const PointList& v, const std::vector<int>& face) {
  Point3 n = Point3::Zero();
  for (std::size_t i = 0; i < face.size(); ++i) {
    const Point3& a = v[static_cast<std::size_t>(face[i])];
    const Point3& b = v[static_cast<std::size_t>(face[(i + 1) % face.size()])];
    n += a.cross(b);
  }
  const double len = n.norm();
  return len > 0 ? Point3(n / len) : Point3::UnitZ();
}

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
Point3 closest_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Point3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Point3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + d1 / (d1 - d3) * ab;
  const Point3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + d2 / (d2 - d6) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double directed_max(const PointList& from, const KdTree& to) {
  double worst = 0;
  for (const auto& p : from) worst = std::max(worst, to.nearest(p).squared_distance);
  return std::sqrt(worst);
}

double directed_nc(const SurfaceSample& from, const SurfaceSample& to, const KdTree& tree) {
  double acc = 0;
  for (std::size_t i = 0; i < from.points.size(); ++i) {
    const int j = tree.nearest(from.points[i]).index;
    acc += unsigned_cosine(from.normals[i], to.normals[static_cast<std::size_t>(j)]);
  }
  return acc / static_cast<double>(from.points.size());
}

double mean_surface_distance(const PointList& points, const PolyMesh& mesh) {
  double acc = 0;
  for (const auto& p : points) acc += point_surface_distance(p, mesh);
  return acc / static_cast<double>(points.size());
}

}  // namespace

SurfaceSample sample_with_normals(const PolyMesh& mesh, int n, std::uint64_t seed) {
  if (mesh.faces.empty()) throw Error(ErrorCode::EmptyMesh, "mesh has no faces");
  const auto s = synth::sample_surface(mesh, n, seed);
  std::vector<Point3> face_normals;
  for (const auto& f : mesh.faces) face_normals.push_back(newell_normal(mesh.vertices, f));
  SurfaceSample out;
  out.points = s.points;
  out.normals.reserve(s.labels.size());
  for (int f : s.labels) out.normals.push_back(face_normals[static_cast<std::size_t>(f)]);
  return out;
}

SurfaceMetrics compare(const SurfaceSample& pred, const SurfaceSample& gt) {
  if (pred.points.empty() || gt.points.empty()) throw Error(ErrorCode::EmptyMesh, "empty surface sample");
  const KdTree tp(pred.points), tg(gt.points);
  SurfaceMetrics m;
  m.cd = matchloss::chamfer(pred.points, gt.points);
  m.hd = std::max(directed_max(pred.points, tg), directed_max(gt.points, tp));
  m.nc = 0.5 * (directed_nc(pred, gt, tg) + directed_nc(gt, pred, tp));
  return m;
}

SurfaceMetrics surface_metrics(const PolyMesh& pred, const PolyMesh& gt, std::uint64_t seed, int samples) {
  return compare(sample_with_normals(pred, samples, seed), sample_with_normals(gt, samples, seed));
}

double hausdorff(const PointList& a, const PointList& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySet, "hausdorff of an empty set");
  const KdTree ta(a), tb(b);
  return std::max(directed_max(a, tb), directed_max(b, ta));
}

double point_surface_distance(const Point3& p, const PolyMesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [a, b, c] : triangulate(mesh)) {
    const Point3 q = closest_on_triangle(p, mesh.vertices[static_cast<std::size_t>(a)],
                                         mesh.vertices[static_cast<std::size_t>(b)],
                                         mesh.vertices[static_cast<std::size_t>(c)]);
    best = std::min(best, (p - q).squaredNorm());
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::EmptyMesh, "mesh has no triangles");
  return std::sqrt(best);
}

double surface_chamfer(const PointList& a_points, const PolyMesh& a, const PointList& b_points, const PolyMesh& b) {
  if (a_points.empty() || b_points.empty()) throw Error(ErrorCode::EmptySet, "surface chamfer of an empty set");
  return 0.5 * (mean_surface_distance(a_points, b) + mean_surface_distance(b_points, a));
}

double nc_prim(const PrimitiveList& pred, const PrimitiveList& gt) {
  if (pred.empty() || gt.empty()) throw Error(ErrorCode::EmptySet, "nc_prim needs primitives on both sides");
  const Eigen::Index n = static_cast<Eigen::Index>(std::max(pred.size(), gt.size()));
  // Dummy rows or columns cost nothing, so only real pairs compete.
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          1.0 - unsigned_cosine(gt[i].normal(), pred[j].normal());
  const auto sigma = matchloss::hungarian(cost);
  double acc = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::size_t j = static_cast<std::size_t>(sigma[i]);
    if (j >= pred.size()) continue;
    acc += unsigned_cosine(gt[i].normal(), pred[j].normal());
    ++pairs;
  }
  return acc / pairs;
}

PolyMesh failure_standin() {
  const double h = 0.5 / std::sqrt(3.0);
  return make_box(Point3::Constant(h));
}

PrimitiveList failure_standin_primitives() {
  const PolyMesh box = failure_standin();
  PrimitiveList out;
  for (std::size_t f = 0; f < box.faces.size(); ++f) {
    PlanePrimitive p;
    p.plane = cartesian_to_polar(box.face_planes[f]).plane;
    for (int v : box.faces[f]) p.points.push_back(box.vertices[static_cast<std::size_t>(v)]);
    out.push_back(std::move(p));
  }
  return out;
}

Record evaluate(const std::string& id, const std::optional<PolyMesh>& pred, const PrimitiveList& pred_primitives,
                const PolyMesh& gt_mesh, const PrimitiveList& gt_primitives, std::uint64_t seed, int samples) {
  Record r;
  r.id = id;
  r.failed = !pred.has_value();
  const PolyMesh mesh = pred ? *pred : failure_standin();
  r.metrics = surface_metrics(mesh, gt_mesh, seed, samples);
  r.nc_prim = nc_prim(pred_primitives.empty() ? failure_standin_primitives() : pred_primitives, gt_primitives);
  if (pred) {
    r.faces = static_cast<int>(pred->faces.size());
    r.vertices = static_cast<int>(pred->vertices.size());
    r.triangles = static_cast<int>(triangulate(*pred).size());
  }
  return r;
}

Summary aggregate(const std::vector<Record>& records) {
  Summary s;
  s.count = static_cast<int>(records.size());
  if (records.empty()) return s;
  for (const auto& r : records) {
    s.failures += r.failed ? 1 : 0;
    s.cd += r.metrics.cd;
    s.hd += r.metrics.hd;
    s.nc += r.metrics.nc;
    s.nc_prim += r.nc_prim;
    s.faces += r.faces;
    s.triangles += r.triangles;
  }
  const double n = s.count;
  s.fr = 100.0 * s.failures / n;
  s.cd /= n;
  s.hd /= n;
  s.nc /= n;
  s.nc_prim /= n;
  s.faces /= n;
  s.triangles /= n;
  return s;
}

}  // namespace paco::metrics
