#pragma once

#include <string>
#include <vector>

#include "paco/mesh.hpp"
#include "paco/metrics.hpp"
#include "paco/primitive.hpp"
#include "paco/segment.hpp"
#include "paco/synth.hpp"

// File formats. Every format carries format_version (a header comment for PLY and
// OBJ, a key for JSON, a column for CSV). Doubles are written round-trip exact, so
// rerunning a stage on identical inputs reproduces identical bytes.

namespace paco::io {

inline constexpr int kFormatVersion = 1;

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

/// ASCII PLY with x y z and, when given, an int label per vertex.
void write_ply(const std::string& path, const PointList& points, const std::vector<int>* labels = nullptr);
struct Cloud {
  PointList points;
  std::vector<int> labels;  // empty when the file has none
};
Cloud read_ply(const std::string& path);

/// Polygon faces; face planes ride along as `# plane` comments so they survive a round trip.
void write_obj(const std::string& path, const PolyMesh& mesh);
/// Fan-triangulated variant of the same mesh.
void write_obj_triangles(const std::string& path, const PolyMesh& mesh);
PolyMesh read_obj(const std::string& path);

std::string primitives_to_json(const PrimitiveList& primitives, bool with_points = true);
PrimitiveList primitives_from_json(const std::string& text);

std::string segmentation_to_json(const segment::Segmentation& seg);
segment::Segmentation segmentation_from_json(const std::string& text);

/// One dataset entry; file names are relative to the dataset directory.
struct ManifestEntry {
  std::string id;
  std::uint64_t seed = 0;
  int complexity = 6;
  int view = 0;
  synth::Level level = synth::Level::simple;
};
struct Manifest {
  std::uint64_t base_seed = 0;
  std::string level;  // as requested, may be "mixed"
  std::vector<ManifestEntry> entries;
};
std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);

/// Writes input.ply, gt.ply (labelled), gt_mesh.obj and gt_primitives.json into `dir`.
void save_sample(const std::string& dir, const synth::Sample& s);
synth::Sample load_sample(const std::string& dir, const ManifestEntry& entry);

std::string report_csv(const std::vector<metrics::Record>& records, const metrics::Summary& summary);
std::string report_json(const std::vector<metrics::Record>& records, const metrics::Summary& summary);

}  // namespace paco::io
