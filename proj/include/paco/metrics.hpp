#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "paco/mesh.hpp"
#include "paco/primitive.hpp"

namespace paco::metrics {

inline constexpr int kSamples = 10000;
/// Reports scale CD and HD by this factor; values in code stay raw.
inline constexpr double kReportScale = 100.0;

struct SurfaceSample {
  PointList points;
  PointList normals;  // unit normal of the face each point came from
};

/// Area-uniform points with face normals. Throws EmptyMesh on zero area.
SurfaceSample sample_with_normals(const PolyMesh& mesh, int n, std::uint64_t seed);

struct SurfaceMetrics {
  double cd = 0;
  double hd = 0;
  double nc = 1;
};

/// CD as in the loss, HD as the larger directed max-min, NC as the symmetric mean of
/// unsigned cosines to the nearest counterpart.
SurfaceMetrics compare(const SurfaceSample& pred, const SurfaceSample& gt);

/// Both meshes sampled with the same seed.
SurfaceMetrics surface_metrics(const PolyMesh& pred, const PolyMesh& gt, std::uint64_t seed = 0,
                               int samples = kSamples);

double hausdorff(const PointList& a, const PointList& b);

/// Exact distance from p to the nearest point on the mesh surface.
double point_surface_distance(const Point3& p, const PolyMesh& mesh);

/// Chamfer with surfaces standing in for the opposite point sets:
/// ½(mean over a of dist(·, B) + mean over b of dist(·, A)). No sampling floor.
double surface_chamfer(const PointList& a_points, const PolyMesh& a, const PointList& b_points, const PolyMesh& b);

/// Mean |cos| between normals of Hungarian-matched primitive pairs. Throws EmptySet.
double nc_prim(const PrimitiveList& pred, const PrimitiveList& gt);

/// Axis-aligned cube with diagonal 1 centered at the origin.
PolyMesh failure_standin();
PrimitiveList failure_standin_primitives();

struct Record {
  std::string id;
  bool failed = false;
  std::string failure;  // error code name when failed
  SurfaceMetrics metrics;
  double nc_prim = 0;
  int faces = 0;
  int vertices = 0;
  int triangles = 0;
};

/// Scores `pred` (or the stand-in when absent) against gt. `pred_primitives` feed
/// NC_prim; the stand-in's faces are used when it is empty.
Record evaluate(const std::string& id, const std::optional<PolyMesh>& pred, const PrimitiveList& pred_primitives,
                const PolyMesh& gt_mesh, const PrimitiveList& gt_primitives, std::uint64_t seed = 0,
                int samples = kSamples);

struct Summary {
  int count = 0;
  int failures = 0;
  double fr = 0;  // percent
  double cd = 0;
  double hd = 0;
  double nc = 0;
  double nc_prim = 0;
  double faces = 0;
  double triangles = 0;
};

/// Means over all records, failures included with their stand-in scores.
Summary aggregate(const std::vector<Record>& records);

}  // namespace paco::metrics
