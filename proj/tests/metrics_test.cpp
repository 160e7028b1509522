#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "paco/assembly.hpp"
#include "paco/error.hpp"
#include "paco/metrics.hpp"
#include "paco/segment.hpp"
#include "paco/synth.hpp"

using namespace paco;

namespace {

PolyMesh shifted(PolyMesh m, const Point3& t) {
  for (auto& v : m.vertices) v += t;
  for (auto& p : m.face_planes) p.d += p.n.dot(t);
  return m;
}

PlanePrimitive with_normal(const Point3& n) {
  PlanePrimitive p;
  CartesianPlaned c;
  c.n = n.normalized();
  c.d = 0.2;
  p.plane = cartesian_to_polar(c).plane;
  return p;
}

PolyMesh single_quad(double flip) {
  PolyMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {flip > 0 ? std::vector<int>{0, 1, 2, 3} : std::vector<int>{3, 2, 1, 0}};
  CartesianPlaned c;
  c.n = Point3(0, 0, flip);
  m.face_planes = {c};
  return m;
}

}  // namespace

TEST(SurfaceMetrics, SelfComparisonIsExact) {
  const PolyMesh cube = make_box(Point3::Constant(0.5));
  const auto m = metrics::surface_metrics(cube, cube, 7);
  EXPECT_EQ(m.cd, 0.0);
  EXPECT_EQ(m.hd, 0.0);
  EXPECT_DOUBLE_EQ(m.nc, 1.0);
}

TEST(SurfaceMetrics, FlippedPlaneKeepsNormalConsistency) {
  const auto m = metrics::surface_metrics(single_quad(1), single_quad(-1), 3, 2000);
  EXPECT_DOUBLE_EQ(m.nc, 1.0);
}

TEST(SurfaceMetrics, ShiftedCubeHausdorffMatchesDenseOracle) {
  const PolyMesh cube = make_box(Point3::Constant(0.5));
  const PolyMesh moved = shifted(cube, {0.1, 0, 0});
  const auto m = metrics::surface_metrics(moved, cube, 1);
  const auto a = synth::sample_surface(moved, 100000, 11), b = synth::sample_surface(cube, 100000, 12);
  const double oracle = metrics::hausdorff(a.points, b.points);
  EXPECT_NEAR(oracle, 0.1, 0.005);
  EXPECT_NEAR(m.hd, oracle, 0.05 * oracle);
  EXPECT_LE(m.cd, m.hd);
}

TEST(SurfaceMetrics, RangesAndDeterminism) {
  const auto s = synth::make_sample({8, 9, 2, synth::Level::hard});
  const PolyMesh other = shifted(s.gt_mesh, {0.03, -0.02, 0.01});
  const auto a = metrics::surface_metrics(other, s.gt_mesh, 5, 3000);
  const auto b = metrics::surface_metrics(other, s.gt_mesh, 5, 3000);
  EXPECT_EQ(a.cd, b.cd);
  EXPECT_EQ(a.hd, b.hd);
  EXPECT_EQ(a.nc, b.nc);
  EXPECT_GT(a.cd, 0);
  EXPECT_LE(a.cd, a.hd);
  EXPECT_GE(a.nc, 0);
  EXPECT_LE(a.nc, 1);
}

TEST(SurfaceMetrics, EmptyMeshRejected) {
  try {
    metrics::surface_metrics(PolyMesh{}, make_box(Point3::Ones()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMesh);
  }
}

TEST(PointSurfaceDistance, CubeOracle) {
  const PolyMesh cube = make_box(Point3::Constant(1.0));
  EXPECT_NEAR(metrics::point_surface_distance({2, 0, 0}, cube), 1.0, 1e-15);
  EXPECT_NEAR(metrics::point_surface_distance({0, 0, 0.25}, cube), 0.75, 1e-15);
  EXPECT_NEAR(metrics::point_surface_distance({2, 2, 0}, cube), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(metrics::point_surface_distance({2, 3, 4}, cube), std::sqrt(1 + 4 + 9.0), 1e-15);
  EXPECT_NEAR(metrics::point_surface_distance({0.3, -1, 0.2}, cube), 0.0, 1e-15);
}

TEST(SurfaceChamfer, ZeroOnSameSurfaceAndShiftAware) {
  const PolyMesh cube = make_box(Point3::Constant(0.5));
  const auto a = synth::sample_surface(cube, 2000, 1).points, b = synth::sample_surface(cube, 2000, 2).points;
  EXPECT_LT(metrics::surface_chamfer(a, cube, b, cube), 1e-15);
  // Only the two x faces move apart; everything else stays on the other surface.
  const PolyMesh moved = shifted(cube, {0.1, 0, 0});
  const auto c = synth::sample_surface(moved, 2000, 3).points;
  EXPECT_GT(metrics::surface_chamfer(c, moved, b, cube), 0.01);
}

TEST(NcPrim, IdenticalSetsGiveOne) {
  const auto s = synth::make_sample({2, 8, 0, synth::Level::simple});
  EXPECT_NEAR(metrics::nc_prim(s.gt_primitives, s.gt_primitives), 1.0, 1e-12);
}

TEST(NcPrim, OneOfFourRotatedNinetyDegrees) {
  const PrimitiveList gt{with_normal({1, 0, 0}), with_normal({0, 1, 0}), with_normal({0, 0, 1}),
                         with_normal({-1, 0, 0})};
  // z rotated about x becomes y; nothing left is aligned with z.
  const PrimitiveList pred{with_normal({1, 0, 0}), with_normal({0, 1, 0}), with_normal({0, 1, 0}),
                           with_normal({-1, 0, 0})};
  EXPECT_NEAR(metrics::nc_prim(pred, gt), 0.75, 1e-12);
}

TEST(NcPrim, UnequalSizesMatchRealPairsOnly) {
  const PrimitiveList gt{with_normal({1, 0, 0}), with_normal({0, 1, 0})};
  const PrimitiveList pred{with_normal({0, 1, 0}), with_normal({0, 0, 1}), with_normal({1, 0, 0})};
  EXPECT_NEAR(metrics::nc_prim(pred, gt), 1.0, 1e-12);
  EXPECT_NEAR(metrics::nc_prim(gt, pred), 1.0, 1e-12);
  EXPECT_THROW(metrics::nc_prim({}, gt), Error);
}

TEST(NcPrim, CleanBoxSegmentation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = synth::make_sample({seed, 6, 0, synth::Level::simple});
    const auto seg = segment::detect_planes(s.gt_cloud);
    EXPECT_GE(metrics::nc_prim(segment::to_primitives(seg, s.gt_cloud), s.gt_primitives), 0.99);
  }
}

TEST(Failure, StandinHasUnitDiagonal) {
  const PolyMesh box = metrics::failure_standin();
  EXPECT_NEAR(bounding_box(box.vertices).diagonal(), 1.0, 1e-15);
  EXPECT_NEAR(bounding_box(box.vertices).center().norm(), 0.0, 1e-15);
  EXPECT_EQ(metrics::failure_standin_primitives().size(), 6u);
}

TEST(Failure, RateAccounting) {
  const auto s = synth::make_sample({4, 7, 1, synth::Level::moderate});
  std::vector<metrics::Record> all_failed, none_failed;
  for (int i = 0; i < 4; ++i) {
    all_failed.push_back(metrics::evaluate("f", std::nullopt, {}, s.gt_mesh, s.gt_primitives, 0, 2000));
    none_failed.push_back(metrics::evaluate("ok", s.gt_mesh, s.gt_primitives, s.gt_mesh, s.gt_primitives, 0, 2000));
  }
  EXPECT_DOUBLE_EQ(metrics::aggregate(all_failed).fr, 100.0);
  EXPECT_DOUBLE_EQ(metrics::aggregate(none_failed).fr, 0.0);
  auto mixed = none_failed;
  mixed[0] = all_failed[0];
  EXPECT_DOUBLE_EQ(metrics::aggregate(mixed).fr, 25.0);
  EXPECT_EQ(metrics::aggregate(none_failed).cd, 0.0);
}

// Stand-in scores worse than a reconstruction from the complete sampling. It does not
// hold for partial-input reconstructions at high missing ratios, which lose whole faces.
TEST(Failure, StandinWorseThanCompleteReconstruction) {
  for (const auto& spec : synth::dataset_specs(60, 12, synth::Level::hard, true, 10)) {
    const auto s = synth::make_sample(spec);
    const auto prims = segment::to_primitives(segment::detect_planes(s.gt_cloud), s.gt_cloud);
    const auto rec = assembly::assemble_mesh(prims);
    const auto ok = metrics::evaluate("ok", rec.mesh, prims, s.gt_mesh, s.gt_primitives, 0, 3000);
    const auto fail = metrics::evaluate("f", std::nullopt, {}, s.gt_mesh, s.gt_primitives, 0, 3000);
    EXPECT_GT(fail.metrics.cd, ok.metrics.cd) << spec.seed;
  }
}
