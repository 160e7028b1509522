// paco: command-line front end for the completion pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <json.hpp>

#include "paco/error.hpp"
#include "paco/pipeline.hpp"

using namespace paco;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int report_error(const std::string& code, const std::string& message, int exit_code) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << std::endl;
  return exit_code;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

struct Options {
  // shared
  std::string data, out;
  int jobs = 1;
  double tau = 0.5;
  // gen
  pipeline::GenOptions gen;
  // segment
  std::string input;
  segment::RegionGrowingParams rg;
  // train
  std::string model_config, train_config, resume, history, checkpoint_dir;
  int epochs = -1, batch_size = -1, checkpoint_every = -1, gt_points = -1;
  double lr = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  // complete / assemble
  std::string model, segmentation, primitives;
  // eval
  int samples = metrics::kSamples;
  // pipeline
  std::string config;
};

int run_gen(const Options& o) {
  const auto m = pipeline::generate(o.out, o.gen, o.jobs);
  std::cout << "wrote " << m.entries.size() << " samples to " << o.out << std::endl;
  return kOk;
}

int run_segment(const Options& o) {
  if (!o.input.empty()) {
    if (o.out.empty()) throw Error(ErrorCode::UsageError, "--out is required with --input");
    const auto cloud = io::read_ply(o.input).points;
    io::write_text(o.out, io::segmentation_to_json(segment::detect_planes(cloud, o.rg)));
    return kOk;
  }
  if (o.data.empty()) throw Error(ErrorCode::UsageError, "give --data DIR or --input PLY --out JSON");
  pipeline::segment_all(o.data, pipeline::load_manifest(o.data), o.rg, o.jobs);
  return kOk;
}

int run_train(const Options& o) {
  trainer::TrainConfig tc;
  if (!o.train_config.empty()) tc = trainer::TrainConfig::from_json(io::read_text(o.train_config));
  if (o.epochs >= 0) tc.epochs = o.epochs;
  if (o.batch_size >= 0) tc.batch_size = o.batch_size;
  if (o.lr >= 0) tc.learning_rate = o.lr;
  if (o.seed_set) tc.seed = o.seed;
  if (o.gt_points >= 0) tc.gt_points = o.gt_points;
  if (o.checkpoint_every >= 0) tc.checkpoint_every = o.checkpoint_every;
  if (!o.checkpoint_dir.empty()) tc.checkpoint_dir = o.checkpoint_dir;
  if (!o.history.empty()) tc.history_path = o.history;
  tc.validate();

  const auto m = pipeline::load_manifest(o.data);
  const auto items = pipeline::training_items(o.data, m, tc.gt_points, o.jobs);
  trainer::Checkpoint ck = [&] {
    if (!o.resume.empty()) return trainer::load_checkpoint(o.resume);
    model::ModelConfig mc;
    if (!o.model_config.empty()) mc = model::ModelConfig::from_json(io::read_text(o.model_config));
    return trainer::Checkpoint{model::Model(mc), {}};
  }();
  trainer::fit(ck.model, items, tc, ck.state, [](const trainer::EpochStats& e) {
    std::ostringstream os;
    os << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean.total;
    log_line(os.str());
  });
  trainer::save_checkpoint(o.out, ck.model, ck.state);
  return kOk;
}

int run_complete(const Options& o) {
  const model::Model mdl = model::Model::load(o.model);
  if (!o.input.empty()) {
    if (o.out.empty()) throw Error(ErrorCode::UsageError, "--out PREFIX is required with --input");
    const auto cloud = io::read_ply(o.input).points;
    const auto seg = o.segmentation.empty() ? segment::detect_planes(cloud)
                                            : io::segmentation_from_json(io::read_text(o.segmentation));
    const auto prims = pipeline::complete(mdl, cloud, seg, o.tau);
    io::write_text(o.out + ".json", io::primitives_to_json(prims));
    PointList pts;
    for (const auto& p : prims) pts.insert(pts.end(), p.points.begin(), p.points.end());
    io::write_ply(o.out + ".ply", pts);
    return kOk;
  }
  if (o.data.empty()) throw Error(ErrorCode::UsageError, "give --data DIR or --input PLY --out PREFIX");
  pipeline::complete_all(o.data, pipeline::load_manifest(o.data), mdl, o.tau, o.jobs);
  return kOk;
}

int run_assemble(const Options& o) {
  if (!o.primitives.empty()) {
    if (o.out.empty()) throw Error(ErrorCode::UsageError, "--out OBJ is required with --primitives");
    const auto a = assembly::assemble_mesh(io::primitives_from_json(io::read_text(o.primitives)));
    io::write_obj(o.out, a.mesh);
    const fs::path p(o.out);
    io::write_obj_triangles((p.parent_path() / (p.stem().string() + "_tri" + p.extension().string())).string(),
                            a.mesh);
    std::cout << nlohmann::json{{"format_version", io::kFormatVersion},
                                {"faces", a.face_count()},
                                {"vertices", a.vertex_count()},
                                {"triangles", a.triangle_count()}}
                     .dump()
              << std::endl;
    return kOk;
  }
  if (o.data.empty()) throw Error(ErrorCode::UsageError, "give --data DIR or --primitives JSON --out OBJ");
  pipeline::assemble_all(o.data, pipeline::load_manifest(o.data), {}, o.jobs);
  return kOk;
}

int run_eval(const Options& o) {
  const auto rep = pipeline::evaluate_all(o.data, pipeline::load_manifest(o.data), o.samples, o.jobs);
  const std::string prefix = o.out.empty() ? (fs::path(o.data) / "report").string() : o.out;
  pipeline::write_report(prefix, rep);
  std::cout << "FR " << rep.summary.fr << " CD " << metrics::kReportScale * rep.summary.cd << " HD "
            << metrics::kReportScale * rep.summary.hd << " NC " << rep.summary.nc << std::endl;
  return kOk;
}

int run_pipeline(const Options& o, const CLI::App& sub) {
  auto cfg = pipeline::PipelineConfig::from_json(io::read_text(o.config));
  if (sub.count("--jobs")) cfg.jobs = o.jobs;
  if (sub.count("--tau")) cfg.tau = o.tau;
  const auto rep = pipeline::run(cfg, log_line);
  std::cout << "FR " << rep.summary.fr << " CD " << metrics::kReportScale * rep.summary.cd << " HD "
            << metrics::kReportScale * rep.summary.hd << " NC " << rep.summary.nc << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric point-cloud completion toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--seed", o.gen.seed, "Base seed");
  gen->add_option("--count", o.gen.count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--level", o.gen.level, "simple | moderate | hard | mixed")
      ->check(CLI::IsMember({"simple", "moderate", "hard", "mixed"}));
  gen->add_option("--max-complexity", o.gen.max_complexity, "Largest face count")->check(CLI::Range(6, 40));
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* seg = app.add_subcommand("segment", "Detect planes in input clouds");
  seg->add_option("--data", o.data, "Dataset directory");
  seg->add_option("--input", o.input, "Single PLY cloud");
  seg->add_option("--out", o.out, "Output JSON (with --input)");
  seg->add_option("--angle", o.rg.angle_tol_deg, "Normal angle tolerance, degrees");
  seg->add_option("--dist", o.rg.dist_tol, "Point-to-plane tolerance");
  seg->add_option("--min-support", o.rg.min_support, "Smallest segment");
  seg->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Train the completion model");
  train->add_option("--data", o.data, "Training dataset directory")->required();
  train->add_option("--out", o.out, "Checkpoint to write")->required();
  train->add_option("--config", o.train_config, "Training config JSON");
  train->add_option("--model-config", o.model_config, "Model config JSON");
  train->add_option("--resume", o.resume, "Continue from a checkpoint");
  train->add_option("--epochs", o.epochs, "Total epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--batch-size", o.batch_size)->check(CLI::PositiveNumber);
  train->add_option("--lr", o.lr, "Initial learning rate")->check(CLI::NonNegativeNumber);
  train->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
    o.seed = s;
    o.seed_set = true;
  }, "Shuffle seed");
  train->add_option("--gt-points", o.gt_points, "Ground-truth points kept per sample")->check(CLI::PositiveNumber);
  train->add_option("--history", o.history, "JSON-lines history file");
  train->add_option("--checkpoint-every", o.checkpoint_every, "Epochs between checkpoints");
  train->add_option("--checkpoint-dir", o.checkpoint_dir);
  train->add_option("--jobs", o.jobs, "Threads for data loading")->check(CLI::PositiveNumber);

  auto* comp = app.add_subcommand("complete", "Predict primitives with a trained model");
  comp->add_option("--model", o.model, "Weights or checkpoint")->required();
  comp->add_option("--data", o.data, "Dataset directory");
  comp->add_option("--input", o.input, "Single PLY cloud");
  comp->add_option("--segmentation", o.segmentation, "Segmentation JSON for --input");
  comp->add_option("--out", o.out, "Output prefix (with --input)");
  comp->add_option("--tau", o.tau, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  comp->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* as = app.add_subcommand("assemble", "Assemble primitives into meshes");
  as->add_option("--data", o.data, "Dataset directory");
  as->add_option("--primitives", o.primitives, "Single primitives JSON");
  as->add_option("--out", o.out, "Output OBJ (with --primitives)");
  as->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "Score assembled meshes");
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--out", o.out, "Report prefix (default DATA/report)");
  ev->add_option("--samples", o.samples, "Surface samples per mesh")->check(CLI::PositiveNumber);
  ev->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* pipe = app.add_subcommand("pipeline", "gen, segment, train, complete, assemble, eval");
  pipe->add_option("--config", o.config, "Pipeline config JSON")->required();
  pipe->add_option("--tau", o.tau, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  pipe->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << std::endl;
    return report_error("UsageError", e.what(), kUsage);
  }

  try {
    if (*gen) return run_gen(o);
    if (*seg) return run_segment(o);
    if (*train) return run_train(o);
    if (*comp) return run_complete(o);
    if (*as) return run_assemble(o);
    if (*ev) return run_eval(o);
    if (*pipe) return run_pipeline(o, *pipe);
  } catch (const Error& e) {
    const std::string code(to_string(e.code()));
    if (e.code() == ErrorCode::UsageError) return report_error(code, e.message(), kUsage);
    if (e.code() == ErrorCode::NonFinite) return report_error(code, e.message(), kNumeric);
    return report_error(code, e.message(), kData);
  } catch (const std::exception& e) {
    return report_error("IoError", e.what(), kData);
  }
  return kUsage;
}
