#include "paco/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <array>
#include <limits>
#include <optional>
#include <string>

#include "paco/polygon.hpp"
#include "paco/spatial.hpp"

namespace paco::synth {

namespace {

constexpr int kMaxAttempts = 10;
constexpr double kWeldTol = 1e-7;
constexpr double kMinFaceFraction = 0.1;     // of mean face area
constexpr double kMinEdgeFraction = 0.015;  // of bounding-box diagonal
constexpr double kInteriorMargin = 0.05;    // of diagonal, origin-to-plane after centering

struct HalfSpace {
  Point3 n;
  double d;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Intersection of half-spaces as a welded polygon mesh; nullopt if any
/// plane contributes no face.
std::optional<PolyMesh> build_polytope(const std::vector<HalfSpace>& planes) {
  PolyMesh mesh;
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const PlaneFrame frame = plane_frame({planes[i].n, planes[i].d});
    constexpr double kBig = 10.0;
    PointList loop = {frame.to_world({-kBig, -kBig}), frame.to_world({kBig, -kBig}),
                      frame.to_world({kBig, kBig}), frame.to_world({-kBig, kBig})};
    for (std::size_t j = 0; j < planes.size() && !loop.empty(); ++j) {
      if (j != i) loop = clip_polygon(loop, planes[j].n, planes[j].d);
    }
    loop = simplify_loop(loop, 1e-9);
    if (loop.size() < 3) return std::nullopt;
    std::vector<int> face;
    for (const auto& p : loop) {
      int found = -1;
      for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if ((mesh.vertices[v] - p).norm() <= kWeldTol) {
          found = static_cast<int>(v);
          break;
        }
      }
      if (found < 0) {
        found = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(p);
      }
      face.push_back(found);
    }
    mesh.faces.push_back(std::move(face));
    mesh.face_planes.push_back({planes[i].n, planes[i].d});
  }
  return mesh;
}

/// Generic-position checks: watertight, every vertex on exactly three faces,
/// no sliver faces or short edges, origin comfortably inside after centering.
bool well_formed(const PolyMesh& mesh) {
  if (!is_watertight(mesh)) return false;
  std::vector<int> valence(mesh.vertices.size(), 0);
  for (const auto& f : mesh.faces) {
    for (int v : f) ++valence[v];
  }
  if (std::any_of(valence.begin(), valence.end(), [](int c) { return c != 3; })) return false;

  const BoundingBox box = bounding_box(mesh.vertices);
  const double diag = box.diagonal();
  const double mean_area = surface_area(mesh) / static_cast<double>(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    if (polygon_area(mesh.vertices, face) < kMinFaceFraction * mean_area) return false;
    for (std::size_t i = 0; i < face.size(); ++i) {
      const double len = (mesh.vertices[face[i]] - mesh.vertices[face[(i + 1) % face.size()]]).norm();
      if (len < kMinEdgeFraction * diag) return false;
    }
    const auto& pl = mesh.face_planes[f];
    if (pl.d - pl.n.dot(box.center()) < kInteriorMargin * diag) return false;
  }
  return true;
}

Point3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Point3 v;
  do {
    v = {g(rng), g(rng), g(rng)};
  } while (v.norm() < 1e-6);
  return v.normalized();
}

/// Proposes a plane that shaves off one vertex (corner cut), one edge
/// (wedge), or a shallow cap in a random direction.
HalfSpace propose_cut(const PolyMesh& mesh, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Incident faces per vertex, edges with their two faces.
  std::vector<std::vector<int>> vertex_faces(mesh.vertices.size());
  std::vector<std::array<int, 4>> edges;  // a, b, face_left, face_right
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (std::size_t i = 0; i < face.size(); ++i) {
      vertex_faces[face[i]].push_back(static_cast<int>(f));
      const int a = face[i];
      const int b = face[(i + 1) % face.size()];
      if (a < b) edges.push_back({a, b, static_cast<int>(f), -1});
    }
  }
  for (auto& e : edges) {
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
      if (static_cast<int>(f) == e[2]) continue;
      const auto& face = mesh.faces[f];
      for (std::size_t i = 0; i < face.size(); ++i) {
        if (face[i] == e[1] && face[(i + 1) % face.size()] == e[0]) e[3] = static_cast<int>(f);
      }
    }
  }

  auto min_incident_edge = [&](int v) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : edges) {
      if (e[0] == v || e[1] == v) best = std::min(best, (mesh.vertices[e[0]] - mesh.vertices[e[1]]).norm());
    }
    return best;
  };

  const double kind = unit(rng);
  if (kind < 0.3) {
    // Cap cut: random direction, shaved a fraction of the support distance.
    const Point3 n = random_unit(rng);
    double support = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    for (const auto& v : mesh.vertices) {
      support = std::max(support, n.dot(v));
      low = std::min(low, n.dot(v));
    }
    return {n, support - (0.04 + 0.1 * unit(rng)) * (support - low)};
  }
  if (kind < 0.65) {
    // Favor vertices with long incident edges; short ones leave no room.
    std::vector<double> weight(mesh.vertices.size());
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] = std::pow(min_incident_edge(static_cast<int>(i)), 2);
    }
    std::discrete_distribution<int> pick(weight.begin(), weight.end());
    const int v = pick(rng);
    Point3 n0 = Point3::Zero();
    for (int f : vertex_faces[v]) n0 += mesh.face_planes[f].n;
    n0.normalize();
    const Point3 n = (n0 + 0.2 * random_unit(rng)).normalized();
    const double depth = (0.3 + 0.4 * unit(rng)) * min_incident_edge(v);
    return {n, n.dot(mesh.vertices[v]) - depth};
  }
  std::vector<double> weight(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    weight[i] = std::pow(std::min(min_incident_edge(edges[i][0]), min_incident_edge(edges[i][1])), 2);
  }
  std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
  const auto& e = edges[pick(rng)];
  const double w = 0.3 + 0.4 * unit(rng);
  const Point3 n = (w * mesh.face_planes[e[2]].n + (1.0 - w) * mesh.face_planes[e[3]].n).normalized();
  const double depth =
      (0.15 + 0.3 * unit(rng)) * std::min(min_incident_edge(e[0]), min_incident_edge(e[1]));
  const double reach = std::max(n.dot(mesh.vertices[e[0]]), n.dot(mesh.vertices[e[1]]));
  return {n, reach - depth};
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

double missing_ratio(Level level) {
  switch (level) {
    case Level::simple: return 0.25;
    case Level::moderate: return 0.50;
    case Level::hard: return 0.75;
  }
  return 0.25;
}

std::string_view to_string(Level level) {
  switch (level) {
    case Level::simple: return "simple";
    case Level::moderate: return "moderate";
    case Level::hard: return "hard";
  }
  return "simple";
}

Level parse_level(std::string_view name) {
  if (name == "simple") return Level::simple;
  if (name == "moderate") return Level::moderate;
  if (name == "hard") return Level::hard;
  throw Error(ErrorCode::UsageError, "unknown level '" + std::string(name) + "'");
}

namespace {

std::optional<PolyMesh> try_gen_shape(std::mt19937_64& rng, int complexity) {
  std::uniform_real_distribution<double> extent(0.3, 1.0);
  const Point3 half(extent(rng), extent(rng), extent(rng));
  std::vector<HalfSpace> planes = {{-Point3::UnitX(), half.x()}, {Point3::UnitX(), half.x()},
                                   {-Point3::UnitY(), half.y()}, {Point3::UnitY(), half.y()},
                                   {-Point3::UnitZ(), half.z()}, {Point3::UnitZ(), half.z()}};
  PolyMesh mesh = *build_polytope(planes);

  for (int cut = 6; cut < complexity; ++cut) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      planes.push_back(propose_cut(mesh, rng));
      auto candidate = build_polytope(planes);
      if (candidate && candidate->faces.size() == planes.size() && well_formed(*candidate)) {
        mesh = std::move(*candidate);
        accepted = true;
      } else {
        planes.pop_back();
      }
    }
    if (!accepted) return std::nullopt;
  }
  return mesh;
}

}  // namespace

PolyMesh gen_shape(std::uint64_t seed, int complexity) {
  if (complexity < 6) {
    throw Error(ErrorCode::GenerationFailed, "complexity must be at least 6");
  }
  // Each cut gets kMaxAttempts proposals; a shape that gets stuck restarts
  // from a fresh box, at most kMaxAttempts times.
  for (int restart = 0; restart < kMaxAttempts; ++restart) {
    std::mt19937_64 rng(mix_seed(seed, 0x5eed + static_cast<std::uint64_t>(restart)));
    if (auto mesh = try_gen_shape(rng, complexity)) return std::move(*mesh);
  }
  throw Error(ErrorCode::GenerationFailed,
              "no valid shape after " + std::to_string(kMaxAttempts) + " restarts");
}

SurfaceSampling sample_surface(const PolyMesh& mesh, int n, std::mt19937_64& rng) {
  SurfaceSampling out;
  if (n <= 0) return out;
  std::vector<int> tri_face;
  const auto tris = triangulate(mesh, &tri_face);
  std::vector<double> cdf(tris.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const auto& [a, b, c] = tris[t];
    acc += 0.5 * (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]).norm();
    cdf[t] = acc;
  }
  if (acc <= 0.0) throw Error(ErrorCode::EmptyMesh, "mesh has zero surface area");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.points.reserve(n);
  out.labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double pick = unit(rng) * acc;
    std::size_t t = std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin();
    t = std::min(t, tris.size() - 1);
    const double s = std::sqrt(unit(rng));
    const double w = unit(rng);
    const auto& [a, b, c] = tris[t];
    out.points.push_back((1.0 - s) * mesh.vertices[a] + s * (1.0 - w) * mesh.vertices[b] +
                         s * w * mesh.vertices[c]);
    out.labels.push_back(tri_face[t]);
  }
  return out;
}

SurfaceSampling sample_surface(const PolyMesh& mesh, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_surface(mesh, n, rng);
}

std::vector<int> occlusion_survivors(const PointList& points, const Point3& view, double ratio) {
  const int n = static_cast<int>(points.size());
  const int removed = static_cast<int>(std::ceil(ratio * n - 1e-9));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double pa = view.dot(points[a]);
    const double pb = view.dot(points[b]);
    return pa != pb ? pa < pb : a < b;
  });
  std::vector<int> keep(order.begin() + std::min(removed, n), order.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

PointList occlude(const PointList& points, const Point3& view, double ratio, int target) {
  const auto keep = occlusion_survivors(points, view, ratio);
  PointList survivors;
  survivors.reserve(keep.size());
  for (int i : keep) survivors.push_back(points[i]);
  PointList out;
  out.reserve(target);
  if (survivors.empty()) return out;
  if (static_cast<int>(survivors.size()) > target) {
    for (int i : farthest_point_sampling(survivors, target)) out.push_back(survivors[i]);
  } else {
    for (int i = 0; i < target; ++i) out.push_back(survivors[i % survivors.size()]);
  }
  return out;
}

Point3 view_direction(int index) {
  const int i = ((index % kViewCount) + kViewCount) % kViewCount;
  return Point3((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0).normalized();
}

Normalization unit_diagonal_transform(const PointList& points) {
  if (points.empty()) throw Error(ErrorCode::DegenerateExtent, "empty input");
  const BoundingBox box = bounding_box(points);
  const double diag = box.diagonal();
  if (!(diag > 0.0)) throw Error(ErrorCode::DegenerateExtent, "bounding box has zero diagonal");
  return {box.center(), 1.0 / diag};
}

PointList normalize_unit_diagonal(const PointList& points) {
  const Normalization t = unit_diagonal_transform(points);
  PointList out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

PolyMesh normalize_unit_diagonal(const PolyMesh& mesh) {
  const Normalization t = unit_diagonal_transform(mesh.vertices);
  PolyMesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  for (auto& pl : out.face_planes) pl.d = t.scale * (pl.d - pl.n.dot(t.center));
  return out;
}

Sample make_sample(const SampleSpec& spec) {
  Sample s;
  s.seed = spec.seed;
  s.complexity = spec.complexity;
  s.view = spec.view;
  s.level = spec.level;
  s.gt_mesh = normalize_unit_diagonal(gen_shape(spec.seed, spec.complexity));

  SurfaceSampling gt = sample_surface(s.gt_mesh, kGroundTruthPoints, mix_seed(spec.seed, 1));
  std::vector<int> remap(s.gt_mesh.faces.size(), -1);
  std::vector<int> counts(s.gt_mesh.faces.size(), 0);
  for (int l : gt.labels) ++counts[l];
  for (std::size_t f = 0; f < counts.size(); ++f) {
    if (counts[f] == 0) continue;
    remap[f] = static_cast<int>(s.gt_primitives.size());
    PlanePrimitive prim;
    prim.plane = cartesian_to_polar(s.gt_mesh.face_planes[f]).plane;
    prim.points.reserve(counts[f]);
    s.gt_primitives.push_back(std::move(prim));
  }
  s.gt_labels.reserve(gt.labels.size());
  for (std::size_t i = 0; i < gt.points.size(); ++i) {
    const int label = remap[gt.labels[i]];
    s.gt_labels.push_back(label);
    s.gt_primitives[label].points.push_back(gt.points[i]);
  }
  s.gt_cloud = std::move(gt.points);
  s.input_cloud = occlude(s.gt_cloud, view_direction(spec.view), missing_ratio(spec.level));
  return s;
}

std::vector<SampleSpec> dataset_specs(std::uint64_t base_seed, int count, Level level, bool mixed,
                                      int max_complexity) {
  std::vector<SampleSpec> specs;
  specs.reserve(count);
  const int span = std::max(1, max_complexity - 5);
  for (int i = 0; i < count; ++i) {
    SampleSpec s;
    s.seed = mix_seed(base_seed, static_cast<std::uint64_t>(i));
    s.complexity = 6 + static_cast<int>(mix_seed(s.seed, 7) % static_cast<std::uint64_t>(span));
    s.view = i % kViewCount;
    s.level = mixed ? static_cast<Level>(i % 3) : level;
    specs.push_back(s);
  }
  return specs;
}

}  // namespace paco::synth
