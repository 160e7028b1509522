#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "paco/mesh.hpp"
#include "paco/primitive.hpp"

namespace paco::synth {

inline constexpr int kInputPoints = 2048;
inline constexpr int kGroundTruthPoints = 8192;
inline constexpr int kViewCount = 8;

enum class Level { simple, moderate, hard };

double missing_ratio(Level level);
std::string_view to_string(Level level);
Level parse_level(std::string_view name);

/// Watertight convex plane-only shape: an axis-aligned box with
/// (complexity - 6) corner or edge cuts. Deterministic in seed.
PolyMesh gen_shape(std::uint64_t seed, int complexity);

struct SurfaceSampling {
  PointList points;
  std::vector<int> labels;  // face index per point
};

/// Area-uniform samples over the mesh surface.
SurfaceSampling sample_surface(const PolyMesh& mesh, int n, std::mt19937_64& rng);
SurfaceSampling sample_surface(const PolyMesh& mesh, int n, std::uint64_t seed);

/// Indices that survive removing the ceil(ratio * N) points lying farthest
/// along -view, in their original order.
std::vector<int> occlusion_survivors(const PointList& points, const Point3& view, double ratio);

/// Occludes and resamples to exactly `target` points (farthest point sampling
/// when over, cyclic duplication when under).
PointList occlude(const PointList& points, const Point3& view, double ratio,
                  int target = kInputPoints);

/// The eight canonical view directions (cube diagonals).
Point3 view_direction(int index);

struct Normalization {
  Point3 center = Point3::Zero();
  double scale = 1.0;  // x' = scale * (x - center)

  Point3 apply(const Point3& p) const { return scale * (p - center); }
};

/// Bounding-box centered, scaled to diagonal 1. Throws DegenerateExtent.
Normalization unit_diagonal_transform(const PointList& points);
PointList normalize_unit_diagonal(const PointList& points);
PolyMesh normalize_unit_diagonal(const PolyMesh& mesh);

struct Sample {
  PointList input_cloud;
  PointList gt_cloud;
  std::vector<int> gt_labels;  // primitive index per gt point
  PrimitiveList gt_primitives;
  PolyMesh gt_mesh;
  Level level = Level::simple;
  std::uint64_t seed = 0;
  int complexity = 6;
  int view = 0;
};

struct SampleSpec {
  std::uint64_t seed = 0;
  int complexity = 6;
  int view = 0;
  Level level = Level::simple;
};

Sample make_sample(const SampleSpec& spec);

/// Per-sample specs for a dataset. Seeds and complexities are derived from
/// the base seed; levels cycle when `mixed` is true.
std::vector<SampleSpec> dataset_specs(std::uint64_t base_seed, int count, Level level,
                                      bool mixed = false, int max_complexity = 10);

/// Stateless 64-bit mixer used to derive per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace paco::synth
