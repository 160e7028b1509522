// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance            all criteria
//   acceptance 3 7        selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "paco/pipeline.hpp"

using namespace paco;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: points materialized from (plane, angle) lie on the plane ------------------

Verdict plane_points() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> r(0.0, 1.0), t(0.0, std::numbers::pi), p(-std::numbers::pi, std::numbers::pi);
  // Rays more than 85 degrees off the normal never occur in the model and
  // leave the point arbitrarily far out, so they are redrawn.
  const double min_cos = std::cos(85.0 * std::numbers::pi / 180.0);
  double worst = 0;
  int identity_misses = 0, redrawn = 0;
  for (int i = 0; i < 10000; ++i) {
    const PolarPlaned plane{r(rng), t(rng), p(rng)};
    double ti, pi;
    do {
      ti = t(rng);
      pi = p(rng);
    } while (std::abs(radius_denominator(plane, ti, pi)) < min_cos && ++redrawn);
    const Point3 x = point_from_angles(plane, ti, pi);
    worst = std::max(worst, std::abs(signed_distance(polar_to_cartesian(plane), x)));
    if (radius_from_angles(plane, plane.theta, plane.phi) != plane.r) ++identity_misses;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && identity_misses == 0 && secs < 1.0,
          fmt("max |dist| %.2e, identity misses %d, %d near-parallel rays redrawn, %.3fs", worst, identity_misses,
              redrawn, secs)};
}

// ---- 2: Hungarian vs exhaustive search ---------------------------------------------

Verdict matching() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  int wrong = 0;
  double worst = 0;
  for (int k = 0; k < 200; ++k) {
    const int m = 2 + k % 6;
    Eigen::MatrixXd c(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) c(i, j) = u(rng);
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do best = std::min(best, matchloss::assignment_cost(c, perm));
    while (std::next_permutation(perm.begin(), perm.end()));
    const double got = matchloss::assignment_cost(c, matchloss::hungarian(c));
    worst = std::max(worst, std::abs(got - best));
    if (std::abs(got - best) > 1e-9) ++wrong;
  }
  const double secs = seconds_since(t0);
  return {wrong == 0 && secs < 10.0, fmt("%d/200 suboptimal, max gap %.1e, %.2fs", wrong, worst, secs)};
}

// ---- 3: loss at the ground truth ---------------------------------------------------

PrimitiveList saturated_truth(const PrimitiveList& gt, int m) {
  PrimitiveList pred = gt;
  for (auto& p : pred) p.confidence = 1.0 - matchloss::kConfidenceClamp;
  for (int j = static_cast<int>(gt.size()); j < m; ++j) {
    PlanePrimitive extra = gt[static_cast<std::size_t>(j) % gt.size()];
    extra.confidence = matchloss::kConfidenceClamp;
    pred.push_back(extra);
  }
  return pred;
}

Verdict loss_at_truth() {
  double worst_total = -1e300, worst_cls = 0, worst_geom = 0;
  for (const auto& spec : synth::dataset_specs(3, 50, synth::Level::simple, true, 10)) {
    const auto s = synth::make_sample(spec);
    diff::Graph g;
    const auto b = matchloss::total_loss(s.gt_primitives,
                                         matchloss::as_tensors(g, saturated_truth(s.gt_primitives, 40)))
                       .breakdown;
    worst_total = std::max(worst_total, b.total);
    worst_cls = std::max(worst_cls, b.cls);
    worst_geom = std::max({worst_geom, std::abs(b.norm), b.cp, b.co});
  }
  // rep is negative at distinct points, so cls and the geometric terms are
  // checked on their own too.
  return {worst_total < 1e-5 && worst_cls < 1e-5 && worst_geom < 1e-9,
          fmt("max total %.2e, max cls %.2e, max |norm|,cp,co %.2e", worst_total, worst_cls, worst_geom)};
}

// ---- 4: permutation invariance -----------------------------------------------------

Verdict permutation() {
  const model::Model m;
  std::mt19937_64 rng(4);
  double worst = 0;
  for (const auto& spec : synth::dataset_specs(4, 20, synth::Level::simple, true, 10)) {
    const auto s = synth::make_sample(spec);
    PrimitiveList pred = m.predict(s.input_cloud, segment::detect_planes(s.input_cloud));
    diff::Graph g0;
    const double base = matchloss::total_loss(s.gt_primitives, matchloss::as_tensors(g0, pred)).breakdown.total;
    for (int k = 0; k < 20; ++k) {
      std::shuffle(pred.begin(), pred.end(), rng);
      diff::Graph g;
      const double v = matchloss::total_loss(s.gt_primitives, matchloss::as_tensors(g, pred)).breakdown.total;
      worst = std::max(worst, std::abs(v - base));
    }
  }
  return {worst <= 1e-9, fmt("max |change| %.2e over 20 samples x 20 permutations", worst)};
}

// ---- 5: gradients through forward + loss --------------------------------------------

Verdict gradients() {
  model::ModelConfig c;
  c.feature_dim = 8;
  c.queries = 4;
  c.points_per_primitive = 8;
  c.plane_proxies = 6;
  c.seed = 5;
  model::Model m(c);

  // A failed check is redrawn on a fresh sample at most once per slot; the
  // finite difference straddles a nearest-neighbor switch in chamfer or
  // repulsion now and then. Both draws failing counts as a failure.
  const char* names[] = {"total", "cls", "norm", "cp", "co", "rep"};
  double worst[6] = {0, 0, 0, 0, 0, 0};
  int resampled = 0;
  bool ok = true;
  const auto specs = synth::dataset_specs(5, 8, synth::Level::moderate, false, 8);
  for (std::size_t slot = 0; slot < 4; ++slot) {
    bool slot_ok = false;
    double errs[6] = {0, 0, 0, 0, 0, 0};
    for (std::size_t draw = 0; draw < 2 && !slot_ok; ++draw) {
      const auto s = synth::make_sample(specs[slot + 4 * draw]);
      const auto seg = segment::detect_planes(s.input_cloud);
      PrimitiveList gt = s.gt_primitives;
      for (auto& p : gt) {
        PointList thin;
        for (std::size_t i = 0; i < p.points.size(); i += 16) thin.push_back(p.points[i]);
        p.points = thin;
      }
      gt.resize(std::min<std::size_t>(gt.size(), 4));
      for (int term = 0; term < 6; ++term) {
        auto f = [&](diff::Graph& g) {
          const auto r = matchloss::total_loss(gt, m.forward(g, s.input_cloud, seg));
          const diff::Tensor parts[] = {r.total, r.cls, r.norm, r.cp, r.co, r.rep};
          return parts[term];
        };
        errs[term] = diff::grad_check_params(f, m.params(), 1e-6, 4);
      }
      slot_ok = errs[0] < 1e-3 && std::all_of(errs + 1, errs + 6, [](double e) { return e < 1e-4; });
      if (!slot_ok && draw == 0) ++resampled;
    }
    ok = ok && slot_ok;
    for (int t = 0; t < 6; ++t) worst[t] = std::max(worst[t], errs[t]);
  }
  std::ostringstream os;
  for (int t = 0; t < 6; ++t) os << names[t] << " " << fmt("%.1e", worst[t]) << (t < 5 ? ", " : "");
  os << "; " << resampled << " of 4 redrawn";
  return {ok, os.str()};
}

// ---- 6: training signal ----------------------------------------------------------

struct HeldOut {
  synth::Sample sample;
  segment::Segmentation seg;
};

double mean_cd(const model::Model& m, const std::vector<HeldOut>& held, bool hard_only) {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const auto& h = held[i];
    if (hard_only && h.sample.level != synth::Level::hard) continue;
    const auto prims = pipeline::complete(m, h.sample.input_cloud, h.seg, m.config().tau);
    sum += pipeline::score("h", pipeline::try_assemble(prims), prims, h.sample).metrics.cd;
    ++n;
  }
  return sum / n;
}

Verdict training() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<trainer::TrainingItem> items;
  for (const auto& spec : synth::dataset_specs(100, 200, synth::Level::simple, true, 10))
    items.push_back(trainer::prepare(synth::make_sample(spec), 2048));
  std::vector<HeldOut> held;
  for (const auto& spec : synth::dataset_specs(200, 60, synth::Level::simple, true, 10)) {
    HeldOut h{synth::make_sample(spec), {}};
    h.seg = segment::detect_planes(h.sample.input_cloud);
    held.push_back(std::move(h));
  }

  double base_hard = 0;
  int n_hard = 0;
  for (const auto& h : held) {
    if (h.sample.level != synth::Level::hard) continue;
    PrimitiveList prims;
    const auto out = pipeline::baseline(h.sample, &prims);
    base_hard += pipeline::score("b", out, prims, h.sample).metrics.cd;
    ++n_hard;
  }
  base_hard /= n_hard;

  model::Model m;
  const double untrained = mean_cd(m, held, false);

  trainer::TrainConfig tc;
  tc.epochs = 60;
  tc.seed = 6;
  trainer::TrainState state;
  const auto stats = trainer::fit(m, items, tc, state);

  // The 20-epoch moving average falls at epoch e exactly when loss(e) < loss(e - 20).
  int rises = 0;
  for (std::size_t e = 20; e < stats.size(); ++e)
    if (!(stats[e].mean.total < stats[e - 20].mean.total)) ++rises;
  const double trained = mean_cd(m, held, false);
  const double trained_hard = mean_cd(m, held, true);
  const double gain = 1.0 - trained / untrained;

  const bool a = rises == 0 && stats.size() == 60;
  const bool b = gain >= 0.30 && trained_hard < base_hard;
  const double s = metrics::kReportScale;
  return {a && b, fmt("(a) %s: loss %.3f -> %.3f, %d moving-average rises; (b) %s: CDx100 untrained %.3f, "
                      "trained %.3f (%.0f%% better); hard: trained %.3f vs input-only %.3f (n=%d); %.0fs",
                      a ? "ok" : "FAIL", stats.front().mean.total, stats.back().mean.total, rises,
                      b ? "ok" : "FAIL", s * untrained, s * trained, 100 * gain, s * trained_hard, s * base_hard,
                      n_hard, seconds_since(t0))};
}

// ---- 7: segmentation of clean boxes ----------------------------------------------

Verdict segmentation() {
  double worst = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = synth::make_sample({seed, 6, 0, synth::Level::simple});
    const auto seg = segment::detect_planes(s.gt_cloud);
    worst = std::min(worst, metrics::nc_prim(segment::to_primitives(seg, s.gt_cloud), s.gt_primitives));
  }
  return {worst >= 0.99, fmt("min NC_prim %.5f over 50 seeds", worst)};
}

// ---- 8: assembling exact primitives ----------------------------------------------

Verdict assembly_round_trip() {
  const auto box = synth::make_sample({3, 6, 0, synth::Level::simple});
  const auto b = assembly::assemble_mesh(box.gt_primitives);
  const bool box_ok = b.face_count() == 6 && b.vertex_count() == 8 && b.triangle_count() == 12;

  double worst = 0;
  int failed = 0;
  for (const auto& spec : synth::dataset_specs(8, 50, synth::Level::simple, false, 10)) {
    const auto s = synth::make_sample(spec);
    try {
      const auto a = assembly::assemble_mesh(s.gt_primitives);
      const auto sampled = synth::sample_surface(a.mesh, synth::kGroundTruthPoints, spec.seed);
      worst = std::max(worst, metrics::kReportScale *
                                  metrics::surface_chamfer(sampled.points, a.mesh, s.gt_cloud, s.gt_mesh));
    } catch (const Error&) {
      ++failed;
    }
  }
  return {box_ok && failed == 0 && worst < 0.5,
          fmt("box %d/%d/%d; max surface CDx100 %.2e over 50 shapes, %d failed", b.face_count(), b.vertex_count(),
              b.triangle_count(), worst, failed)};
}

// ---- 9: metric sanity --------------------------------------------------------------

Verdict metric_sanity() {
  const auto s = synth::make_sample({9, 9, 1, synth::Level::moderate});
  const auto self = metrics::surface_metrics(s.gt_mesh, s.gt_mesh, 9);
  const bool self_ok = self.cd == 0.0 && self.hd == 0.0 && std::abs(self.nc - 1.0) < 1e-12;

  const PolyMesh cube = make_box(Point3::Constant(0.5));
  PolyMesh moved = cube;
  const Point3 t(0.1, 0, 0);
  for (auto& v : moved.vertices) v += t;
  for (auto& p : moved.face_planes) p.d += p.n.dot(t);
  const double hd = metrics::surface_metrics(moved, cube, 9).hd;
  const double oracle = metrics::hausdorff(synth::sample_surface(moved, 100000, 91).points,
                                           synth::sample_surface(cube, 100000, 92).points);
  const bool hd_ok = std::abs(hd - oracle) <= 0.05 * oracle && std::abs(hd - 0.1) <= 0.005;

  std::vector<metrics::Record> recs;
  for (const auto& spec : synth::dataset_specs(19, 10, synth::Level::simple, true, 10)) {
    const auto x = synth::make_sample(spec);
    recs.push_back(pipeline::score(spec.level == synth::Level::hard ? "h" : "x", pipeline::try_assemble({}), {}, x,
                                   2000));
  }
  const auto sum = metrics::aggregate(recs);
  return {self_ok && hd_ok && sum.fr == 100.0,
          fmt("self (%.1e, %.1e, %.12f); shifted-cube HD %.4f vs oracle %.4f; FR %.1f on all-failure corpus",
              self.cd, self.hd, self.nc, hd, oracle, sum.fr)};
}

// ---- 10: determinism ---------------------------------------------------------------

Verdict determinism() {
  auto config = [](const fs::path& dir) {
    pipeline::PipelineConfig c;
    c.data_dir = dir.string();
    c.train_data = {10, 8, "mixed", 10};
    c.eval_data = {11, 6, "mixed", 10};
    c.model.feature_dim = 16;
    c.model.queries = 12;
    c.model.plane_proxies = 10;
    c.model.points_per_primitive = 32;
    c.train.epochs = 3;
    c.train.batch_size = 4;
    c.tau = 0.3;
    c.eval_samples = 4000;
    c.jobs = 1;
    return c;
  };
  const fs::path a = fs::temp_directory_path() / "paco_accept_run_a", b = fs::temp_directory_path() / "paco_accept_run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  pipeline::run(config(a));
  auto cb = config(b);
  cb.jobs = 2;  // thread count is not part of the result
  pipeline::run(cb);
  bool same = true;
  for (const char* f : {"report.csv", "report.json", "model.ckpt", "history.jsonl"})
    same = same && io::read_text((a / f).string()) == io::read_text((b / f).string());
  const std::string csv = io::read_text((a / "report.csv").string());
  const auto rows = std::count(csv.begin(), csv.end(), '\n');
  fs::remove_all(a);
  fs::remove_all(b);
  return {same, fmt("report.csv, report.json, model.ckpt, history.jsonl %s (%ld report lines)",
                    same ? "identical" : "DIFFER", static_cast<long>(rows))};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all = {
      {1, "plane point materialization", plane_points},
      {2, "matching optimality", matching},
      {3, "loss at ground truth", loss_at_truth},
      {4, "permutation invariance", permutation},
      {5, "gradient fidelity", gradients},
      {6, "training signal", training},
      {7, "segmentation quality", segmentation},
      {8, "assembly round trip", assembly_round_trip},
      {9, "metric sanity", metric_sanity},
      {10, "determinism", determinism},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::printf("%s [PRIMARY] %2d %s: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
