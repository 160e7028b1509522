#include "paco/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "paco/error.hpp"

namespace paco::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_at = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string sample_dir(const std::string& dir, const std::string& id) { return (fs::path(dir) / id).string(); }

// ---- in-memory steps ------------------------------------------------------------

PrimitiveList complete(const model::Model& model, const PointList& cloud, const segment::Segmentation& seg,
                       double tau) {
  return model::select(model.predict(cloud, seg), tau);
}

AssemblyOutcome try_assemble(const PrimitiveList& primitives, const assembly::AssemblyParams& params) {
  AssemblyOutcome out;
  try {
    out.result = assembly::assemble_mesh(primitives, params);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::EmptySelection:
      case ErrorCode::DegenerateFootprint:
      case ErrorCode::EmptyMesh:
        out.failure = std::string(to_string(e.code()));
        break;
      default:
        throw;
    }
  }
  return out;
}

AssemblyOutcome baseline(const synth::Sample& sample, PrimitiveList* primitives) {
  const auto prims = segment::to_primitives(segment::detect_planes(sample.input_cloud), sample.input_cloud);
  if (primitives) *primitives = prims;
  return try_assemble(prims);
}

metrics::Record score(const std::string& id, const AssemblyOutcome& outcome, const PrimitiveList& primitives,
                      const synth::Sample& sample, int samples) {
  std::optional<PolyMesh> mesh;
  if (outcome.result) mesh = outcome.result->mesh;
  auto r = metrics::evaluate(id, mesh, primitives, sample.gt_mesh, sample.gt_primitives, sample.seed, samples);
  r.failure = outcome.failure;
  return r;
}

// ---- dataset stages -------------------------------------------------------------

io::Manifest generate(const std::string& dir, const GenOptions& opt, int jobs) {
  if (opt.count <= 0) throw Error(ErrorCode::UsageError, "count must be positive");
  const bool mixed = opt.level == "mixed";
  const synth::Level level = mixed ? synth::Level::simple : synth::parse_level(opt.level);
  io::Manifest m;
  m.base_seed = opt.seed;
  m.level = opt.level;
  const auto specs = synth::dataset_specs(opt.seed, opt.count, level, mixed, opt.max_complexity);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "s%04zu", i);
    m.entries.push_back({id, specs[i].seed, specs[i].complexity, specs[i].view, specs[i].level});
  }
  parallel_for(static_cast<int>(specs.size()), jobs, [&](int i) {
    io::save_sample(sample_dir(dir, m.entries[static_cast<std::size_t>(i)].id),
                    synth::make_sample(specs[static_cast<std::size_t>(i)]));
  });
  io::write_text((fs::path(dir) / "manifest.json").string(), io::manifest_to_json(m));
  return m;
}

io::Manifest load_manifest(const std::string& dir) {
  return io::manifest_from_json(io::read_text((fs::path(dir) / "manifest.json").string()));
}

namespace {

std::string seg_path(const std::string& dir, const io::ManifestEntry& e) {
  return (fs::path(sample_dir(dir, e.id)) / "segmentation.json").string();
}

}  // namespace

void segment_all(const std::string& dir, const io::Manifest& m, const segment::RegionGrowingParams& params,
                 int jobs) {
  parallel_for(static_cast<int>(m.entries.size()), jobs, [&](int i) {
    const auto& e = m.entries[static_cast<std::size_t>(i)];
    const auto cloud = io::read_ply((fs::path(sample_dir(dir, e.id)) / "input.ply").string()).points;
    io::write_text(seg_path(dir, e), io::segmentation_to_json(segment::detect_planes(cloud, params)));
  });
}

std::vector<trainer::TrainingItem> training_items(const std::string& dir, const io::Manifest& m, int gt_points,
                                                  int jobs) {
  std::vector<trainer::TrainingItem> items(m.entries.size());
  parallel_for(static_cast<int>(m.entries.size()), jobs, [&](int i) {
    const auto& e = m.entries[static_cast<std::size_t>(i)];
    const auto s = io::load_sample(sample_dir(dir, e.id), e);
    const std::string sp = seg_path(dir, e);
    auto seg = fs::exists(sp) ? io::segmentation_from_json(io::read_text(sp)) : segment::detect_planes(s.input_cloud);
    items[static_cast<std::size_t>(i)] = trainer::prepare(s, std::move(seg), gt_points);
  });
  return items;
}

void complete_all(const std::string& dir, const io::Manifest& m, const model::Model& model, double tau, int jobs) {
  parallel_for(static_cast<int>(m.entries.size()), jobs, [&](int i) {
    const auto& e = m.entries[static_cast<std::size_t>(i)];
    const fs::path d = sample_dir(dir, e.id);
    const auto cloud = io::read_ply((d / "input.ply").string()).points;
    const std::string sp = seg_path(dir, e);
    const auto seg = fs::exists(sp) ? io::segmentation_from_json(io::read_text(sp)) : segment::detect_planes(cloud);
    const auto prims = complete(model, cloud, seg, tau);
    io::write_text((d / "pred_primitives.json").string(), io::primitives_to_json(prims));
    PointList pts;
    for (const auto& p : prims) pts.insert(pts.end(), p.points.begin(), p.points.end());
    io::write_ply((d / "pred_points.ply").string(), pts);
  });
}

void assemble_all(const std::string& dir, const io::Manifest& m, const assembly::AssemblyParams& params, int jobs) {
  parallel_for(static_cast<int>(m.entries.size()), jobs, [&](int i) {
    const fs::path d = sample_dir(dir, m.entries[static_cast<std::size_t>(i)].id);
    const auto prims = io::primitives_from_json(io::read_text((d / "pred_primitives.json").string()));
    const auto out = try_assemble(prims, params);
    json j{{"format_version", io::kFormatVersion}, {"failed", !out.result}};
    fs::remove(d / "pred_mesh.obj");
    fs::remove(d / "pred_mesh_tri.obj");
    if (out.result) {
      io::write_obj((d / "pred_mesh.obj").string(), out.result->mesh);
      io::write_obj_triangles((d / "pred_mesh_tri.obj").string(), out.result->mesh);
      j["faces"] = out.result->face_count();
      j["vertices"] = out.result->vertex_count();
      j["triangles"] = out.result->triangle_count();
    } else {
      j["failure"] = out.failure;
    }
    io::write_text((d / "assembly.json").string(), j.dump(1));
  });
}

Report evaluate_all(const std::string& dir, const io::Manifest& m, int samples, int jobs) {
  Report rep;
  rep.records.resize(m.entries.size());
  parallel_for(static_cast<int>(m.entries.size()), jobs, [&](int i) {
    const auto& e = m.entries[static_cast<std::size_t>(i)];
    const fs::path d = sample_dir(dir, e.id);
    const auto s = io::load_sample(d.string(), e);
    const auto prims = io::primitives_from_json(io::read_text((d / "pred_primitives.json").string()));
    AssemblyOutcome out;
    json a;
    try {
      a = json::parse(io::read_text((d / "assembly.json").string()));
    } catch (const json::exception& err) {
      throw Error(ErrorCode::FormatError, "assembly.json: " + std::string(err.what()));
    }
    if (a.value("failed", true)) {
      out.failure = a.value("failure", std::string("Unknown"));
    } else {
      assembly::Assembly asm_;
      asm_.mesh = io::read_obj((d / "pred_mesh.obj").string());
      out.result = std::move(asm_);
    }
    rep.records[static_cast<std::size_t>(i)] = score(e.id, out, prims, s, samples);
  });
  rep.summary = metrics::aggregate(rep.records);
  return rep;
}

void write_report(const std::string& prefix, const Report& report) {
  io::write_text(prefix + ".csv", io::report_csv(report.records, report.summary));
  io::write_text(prefix + ".json", io::report_json(report.records, report.summary));
}

// ---- end to end -----------------------------------------------------------------

namespace {

GenOptions gen_from(const json& j, GenOptions g) {
  g.seed = j.value("seed", g.seed);
  g.count = j.value("count", g.count);
  g.level = j.value("level", g.level);
  g.max_complexity = j.value("max_complexity", g.max_complexity);
  return g;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("pipeline config: ") + e.what());
  }
  if (!j.is_object() || j.value("format_version", -1) != io::kFormatVersion)
    throw Error(ErrorCode::FormatError, "pipeline config: missing or unsupported format_version");
  PipelineConfig c;
  try {
    c.data_dir = j.value("data_dir", c.data_dir);
    if (j.contains("train_data")) c.train_data = gen_from(j["train_data"], c.train_data);
    if (j.contains("eval_data")) c.eval_data = gen_from(j["eval_data"], c.eval_data);
    if (j.contains("model")) c.model = model::ModelConfig::from_json(j["model"].dump());
    if (j.contains("train")) c.train = trainer::TrainConfig::from_json(j["train"].dump());
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.tau = j.value("tau", c.tau);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.report = j.value("report", c.report);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("pipeline config: ") + e.what());
  }
  return c;
}

Report run(const PipelineConfig& cfg, const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const std::string train_dir = (fs::path(cfg.data_dir) / "train").string();
  const std::string eval_dir = (fs::path(cfg.data_dir) / "eval").string();

  model::Model model = [&] {
    if (!cfg.checkpoint.empty()) {
      say("loading " + cfg.checkpoint);
      return model::Model::load(cfg.checkpoint);
    }
    say("gen train");
    const auto tm = generate(train_dir, cfg.train_data, cfg.jobs);
    say("segment train");
    segment_all(train_dir, tm, {}, cfg.jobs);
    const auto items = training_items(train_dir, tm, cfg.train.gt_points, cfg.jobs);
    model::Model mdl(cfg.model);
    trainer::TrainConfig tc = cfg.train;
    if (tc.history_path.empty()) tc.history_path = (fs::path(cfg.data_dir) / "history.jsonl").string();
    trainer::TrainState state;
    trainer::fit(mdl, items, tc, state, [&](const trainer::EpochStats& e) {
      say("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.mean.total));
    });
    trainer::save_checkpoint((fs::path(cfg.data_dir) / "model.ckpt").string(), mdl, state);
    return mdl;
  }();

  say("gen eval");
  const auto em = generate(eval_dir, cfg.eval_data, cfg.jobs);
  say("segment eval");
  segment_all(eval_dir, em, {}, cfg.jobs);
  say("complete");
  complete_all(eval_dir, em, model, cfg.tau, cfg.jobs);
  say("assemble");
  assemble_all(eval_dir, em, {}, cfg.jobs);
  say("eval");
  Report rep = evaluate_all(eval_dir, em, cfg.eval_samples, cfg.jobs);
  write_report(cfg.report.empty() ? (fs::path(cfg.data_dir) / "report").string() : cfg.report, rep);
  return rep;
}

}  // namespace paco::pipeline
