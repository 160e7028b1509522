#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "paco/assembly.hpp"
#include "paco/io.hpp"
#include "paco/metrics.hpp"
#include "paco/model.hpp"
#include "paco/trainer.hpp"

// Dataset-level stages over a directory laid out as
//   <dir>/manifest.json
//   <dir>/<id>/{input.ply, gt.ply, gt_mesh.obj, gt_primitives.json}        gen
//   <dir>/<id>/segmentation.json                                          segment
//   <dir>/<id>/{pred_primitives.json, pred_points.ply}                    complete
//   <dir>/<id>/{pred_mesh.obj, pred_mesh_tri.obj, assembly.json}          assemble
// Per-sample stages run on `jobs` threads; outputs do not depend on it.

namespace paco::pipeline {

/// Runs fn(0..n-1) on up to `jobs` threads. Rethrows the failure with the lowest index.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

std::string sample_dir(const std::string& dir, const std::string& id);

// ---- in-memory steps ------------------------------------------------------------

/// Model predictions kept at confidence >= tau.
PrimitiveList complete(const model::Model& model, const PointList& cloud, const segment::Segmentation& seg,
                       double tau);

struct AssemblyOutcome {
  std::optional<assembly::Assembly> result;
  std::string failure;  // error code name when result is empty
};
/// Assembly with library failures (empty selection, degenerate footprints) captured.
AssemblyOutcome try_assemble(const PrimitiveList& primitives, const assembly::AssemblyParams& params = {});

/// Input-only baseline: segment the incomplete input and assemble it directly.
AssemblyOutcome baseline(const synth::Sample& sample, PrimitiveList* primitives = nullptr);

metrics::Record score(const std::string& id, const AssemblyOutcome& outcome, const PrimitiveList& primitives,
                      const synth::Sample& sample, int samples = metrics::kSamples);

// ---- dataset stages -------------------------------------------------------------

struct GenOptions {
  std::uint64_t seed = 0;
  int count = 10;
  std::string level = "simple";  // simple | moderate | hard | mixed
  int max_complexity = 10;
};
io::Manifest generate(const std::string& dir, const GenOptions& opt, int jobs = 1);
io::Manifest load_manifest(const std::string& dir);

void segment_all(const std::string& dir, const io::Manifest& m, const segment::RegionGrowingParams& params = {},
                 int jobs = 1);

/// Loads every sample with its stored segmentation (computed when missing).
std::vector<trainer::TrainingItem> training_items(const std::string& dir, const io::Manifest& m, int gt_points,
                                                  int jobs = 1);

void complete_all(const std::string& dir, const io::Manifest& m, const model::Model& model, double tau,
                  int jobs = 1);
void assemble_all(const std::string& dir, const io::Manifest& m, const assembly::AssemblyParams& params = {},
                  int jobs = 1);

struct Report {
  std::vector<metrics::Record> records;
  metrics::Summary summary;
};
Report evaluate_all(const std::string& dir, const io::Manifest& m, int samples = metrics::kSamples, int jobs = 1);
/// Writes <prefix>.csv and <prefix>.json.
void write_report(const std::string& prefix, const Report& report);

// ---- end to end -----------------------------------------------------------------

struct PipelineConfig {
  std::string data_dir = "paco_run";
  GenOptions train_data{0, 20, "mixed", 10};
  GenOptions eval_data{1, 20, "mixed", 10};
  model::ModelConfig model;
  trainer::TrainConfig train;
  /// Skip training and load these weights instead.
  std::string checkpoint;
  double tau = 0.5;
  int eval_samples = metrics::kSamples;
  std::string report;  // prefix; defaults to <data_dir>/report
  int jobs = 1;

  static PipelineConfig from_json(const std::string& text);
};

/// gen (train and eval sets) -> segment -> train -> complete -> assemble -> eval.
Report run(const PipelineConfig& cfg, const std::function<void(const std::string&)>& log = {});

}  // namespace paco::pipeline
