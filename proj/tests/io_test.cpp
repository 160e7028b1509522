#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "paco/error.hpp"
#include "paco/io.hpp"

using namespace paco;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("paco_io_" + name);
  fs::remove_all(p);
  return p;
}

void expect_format_error(const std::function<void()>& f) {
  try {
    f();
    FAIL() << "expected FormatError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError) << e.what();
  }
}

}  // namespace

TEST(Ply, RoundTripIsExact) {
  const auto s = synth::make_sample({1, 8, 2, synth::Level::moderate});
  const std::string path = scratch("cloud.ply").string();
  io::write_ply(path, s.gt_cloud, &s.gt_labels);
  const auto c = io::read_ply(path);
  EXPECT_EQ(c.points, s.gt_cloud);
  EXPECT_EQ(c.labels, s.gt_labels);
  io::write_ply(path, s.input_cloud);
  const auto d = io::read_ply(path);
  EXPECT_EQ(d.points, s.input_cloud);
  EXPECT_TRUE(d.labels.empty());
}

TEST(Ply, RejectsBadInput) {
  const std::string path = scratch("bad.ply").string();
  io::write_text(path, "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n");
  expect_format_error([&] { io::read_ply(path); });
  io::write_text(path, "ply\nformat ascii 1.0\ncomment format_version 9\nelement vertex 0\n"
                       "property double x\nproperty double y\nproperty double z\nend_header\n");
  expect_format_error([&] { io::read_ply(path); });
  io::write_text(path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
                       "property double z\nend_header\n0 0 0\n");
  expect_format_error([&] { io::read_ply(path); });
  try {
    io::read_ply(scratch("missing.ply").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Obj, RoundTripKeepsPlanes) {
  const auto s = synth::make_sample({4, 9, 0, synth::Level::simple});
  const std::string path = scratch("mesh.obj").string();
  io::write_obj(path, s.gt_mesh);
  const PolyMesh m = io::read_obj(path);
  EXPECT_EQ(m.vertices, s.gt_mesh.vertices);
  EXPECT_EQ(m.faces, s.gt_mesh.faces);
  ASSERT_EQ(m.face_planes.size(), s.gt_mesh.face_planes.size());
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    EXPECT_EQ(m.face_planes[f].n, s.gt_mesh.face_planes[f].n);
    EXPECT_EQ(m.face_planes[f].d, s.gt_mesh.face_planes[f].d);
  }
}

TEST(Obj, TrianglesAndFittedPlanes) {
  const PolyMesh box = make_box(Point3(1, 2, 3));
  const std::string path = scratch("tri.obj").string();
  io::write_obj_triangles(path, box);
  const PolyMesh t = io::read_obj(path);
  EXPECT_EQ(t.faces.size(), 12u);
  // No plane comments: planes come from the faces themselves.
  EXPECT_LT(max_planarity_error(t), 1e-12);
  io::write_text(path, "v 0 0 0\nv 1 0 0\nf 1 2 x\n");
  expect_format_error([&] { io::read_obj(path); });
  io::write_text(path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n");
  expect_format_error([&] { io::read_obj(path); });
}

TEST(Json, PrimitivesRoundTrip) {
  const auto s = synth::make_sample({6, 7, 1, synth::Level::hard});
  auto prims = s.gt_primitives;
  prims[0].confidence = 0.25;
  const auto back = io::primitives_from_json(io::primitives_to_json(prims));
  ASSERT_EQ(back.size(), prims.size());
  for (std::size_t i = 0; i < prims.size(); ++i) {
    EXPECT_EQ(back[i].plane.r, prims[i].plane.r);
    EXPECT_EQ(back[i].plane.theta, prims[i].plane.theta);
    EXPECT_EQ(back[i].plane.phi, prims[i].plane.phi);
    EXPECT_EQ(back[i].confidence, prims[i].confidence);
    EXPECT_EQ(back[i].points, prims[i].points);
  }
  EXPECT_TRUE(io::primitives_from_json(io::primitives_to_json(prims, false))[0].points.empty());
  expect_format_error([] { io::primitives_from_json(R"({"primitives": []})"); });
  expect_format_error([] { io::primitives_from_json(R"({"format_version": 1, "primitives": [{"r": 1}]})"); });
  expect_format_error([] { io::primitives_from_json("[1, 2"); });
}

TEST(Json, SegmentationAndManifestRoundTrip) {
  const auto s = synth::make_sample({6, 7, 1, synth::Level::simple});
  const auto seg = segment::detect_planes(s.input_cloud);
  const auto back = io::segmentation_from_json(io::segmentation_to_json(seg));
  ASSERT_EQ(back.segments.size(), seg.segments.size());
  for (std::size_t i = 0; i < seg.segments.size(); ++i) {
    EXPECT_EQ(back.segments[i].members, seg.segments[i].members);
    EXPECT_EQ(back.segments[i].plane.n, seg.segments[i].plane.n);
    EXPECT_EQ(back.segments[i].plane.d, seg.segments[i].plane.d);
  }
  EXPECT_EQ(back.unassigned, seg.unassigned);

  io::Manifest m;
  m.base_seed = 99;
  m.level = "mixed";
  m.entries.push_back({"s0000", 18446744073709551557ull, 9, 3, synth::Level::hard});
  const auto mb = io::manifest_from_json(io::manifest_to_json(m));
  EXPECT_EQ(io::manifest_to_json(mb), io::manifest_to_json(m));
  EXPECT_EQ(mb.entries[0].seed, 18446744073709551557ull);
  expect_format_error([] {
    io::manifest_from_json(R"({"format_version": 1, "samples": [{"id": "a", "seed": 1, "complexity": 6,
                               "view": 0, "level": "extreme"}]})");
  });
}

TEST(Sample, SaveLoadMatchesGenerator) {
  const auto s = synth::make_sample({13, 10, 5, synth::Level::moderate});
  const std::string dir = scratch("sample").string();
  io::save_sample(dir, s);
  const auto l = io::load_sample(dir, {"x", s.seed, s.complexity, s.view, s.level});
  EXPECT_EQ(l.input_cloud, s.input_cloud);
  EXPECT_EQ(l.gt_cloud, s.gt_cloud);
  EXPECT_EQ(l.gt_labels, s.gt_labels);
  EXPECT_EQ(l.gt_mesh.faces, s.gt_mesh.faces);
  ASSERT_EQ(l.gt_primitives.size(), s.gt_primitives.size());
  for (std::size_t i = 0; i < s.gt_primitives.size(); ++i) {
    EXPECT_EQ(l.gt_primitives[i].points, s.gt_primitives[i].points);
    EXPECT_EQ(l.gt_primitives[i].plane.r, s.gt_primitives[i].plane.r);
  }
  fs::remove_all(dir);
}

TEST(Report, VersionedAndScaled) {
  metrics::Record a;
  a.id = "s0";
  a.metrics = {0.0123, 0.0456, 0.9};
  a.nc_prim = 0.8;
  metrics::Record b = a;
  b.id = "s1";
  b.failed = true;
  b.failure = "EmptySelection";
  const auto summary = metrics::aggregate({a, b});
  const std::string csv = io::report_csv({a, b}, summary);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "format_version,id,failed,failure,cd_x100,hd_x100,nc,nc_prim,faces,vertices,triangles,fr");
  EXPECT_NE(csv.find("1,s1,1,EmptySelection,"), std::string::npos);
  const auto j = nlohmann::json::parse(io::report_json({a, b}, summary));
  EXPECT_EQ(j["format_version"], 1);
  EXPECT_EQ(j["summary"]["fr"], 50.0);
  for (const auto& r : j["samples"]) {
    EXPECT_EQ(r["cd_x100"].get<double>(), 100 * r["cd"].get<double>());
    EXPECT_EQ(r["hd_x100"].get<double>(), 100 * r["hd"].get<double>());
  }
}
