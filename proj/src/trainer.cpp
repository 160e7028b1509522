#include "paco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>

namespace paco::trainer {

namespace {

nlohmann::json breakdown_json(const matchloss::LossBreakdown& b) {
  return {{"cls", b.cls}, {"norm", b.norm}, {"cp", b.cp}, {"co", b.co}, {"rep", b.rep}, {"total", b.total}};
}

void accumulate(matchloss::LossBreakdown& acc, const matchloss::LossBreakdown& b, double w) {
  acc.cls += w * b.cls;
  acc.norm += w * b.norm;
  acc.cp += w * b.cp;
  acc.co += w * b.co;
  acc.rep += w * b.rep;
  acc.total += w * b.total;
}

std::string checkpoint_path(const TrainConfig& cfg, int epoch) {
  return (std::filesystem::path(cfg.checkpoint_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt")).string();
}

}  // namespace

// ---- config ---------------------------------------------------------------------

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["lr_decay"] = lr_decay;
  j["decay_every"] = decay_every;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["gt_points"] = gt_points;
  j["checkpoint_every"] = checkpoint_every;
  j["checkpoint_dir"] = checkpoint_dir;
  j["history_path"] = history_path;
  j["loss"] = {{"beta1", loss.beta1}, {"beta2", loss.beta2}, {"beta3", loss.beta3}, {"beta4", loss.beta4},
               {"lambda", loss.lambda}, {"omega", loss.omega}, {"k", loss.k}, {"null_weight", loss.null_weight},
               {"rep_mean", loss.rep_mean}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.gt_points = j.value("gt_points", c.gt_points);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.history_path = j.value("history_path", c.history_path);
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      c.loss.beta1 = l.value("beta1", c.loss.beta1);
      c.loss.beta2 = l.value("beta2", c.loss.beta2);
      c.loss.beta3 = l.value("beta3", c.loss.beta3);
      c.loss.beta4 = l.value("beta4", c.loss.beta4);
      c.loss.lambda = l.value("lambda", c.loss.lambda);
      c.loss.omega = l.value("omega", c.loss.omega);
      c.loss.k = l.value("k", c.loss.k);
      c.loss.null_weight = l.value("null_weight", c.loss.null_weight);
      c.loss.rep_mean = l.value("rep_mean", c.loss.rep_mean);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("train config: ") + e.what());
  }
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::UsageError, std::string("train config: ") + what); };
  if (!(learning_rate >= 0)) fail("learning_rate must be >= 0");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("lr_decay must be in (0, 1]");
  if (decay_every <= 0) fail("decay_every must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (gt_points <= 0) fail("gt_points must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) fail("checkpoint_dir is required with checkpoint_every");
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
}

// ---- data -----------------------------------------------------------------------

TrainingItem prepare(const synth::Sample& sample, int gt_points, const segment::RegionGrowingParams& params) {
  return prepare(sample, segment::detect_planes(sample.input_cloud, params), gt_points);
}

TrainingItem prepare(const synth::Sample& sample, segment::Segmentation seg, int gt_points) {
  TrainingItem item;
  item.cloud = sample.input_cloud;
  item.seg = std::move(seg);
  // The gt sampling is i.i.d. area-uniform, so a stride keeps it unbiased.
  const std::size_t stride =
      std::max<std::size_t>(1, (sample.gt_cloud.size() + static_cast<std::size_t>(gt_points) - 1) /
                                   static_cast<std::size_t>(gt_points));
  for (const auto& p : sample.gt_primitives) {
    item.gt.push_back(p);
    item.gt.back().points.clear();
  }
  for (std::size_t i = 0; i < sample.gt_cloud.size(); i += stride) {
    item.gt[static_cast<std::size_t>(sample.gt_labels[i])].points.push_back(sample.gt_cloud[i]);
  }
  // Primitives left without points by the stride (tiny faces) are dropped.
  item.gt.erase(std::remove_if(item.gt.begin(), item.gt.end(), [](const PlanePrimitive& p) { return p.points.empty(); }),
                item.gt.end());
  return item;
}

// ---- optimizer ------------------------------------------------------------------

void AdamW::update(diff::ParamStore& store, const diff::GradientBuffer& grads, double lr, const TrainConfig& cfg) {
  if (m.size() != store.size()) {
    m = store.zero_gradients();
    v = store.zero_gradients();
  }
  ++step;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    diff::Matrix& p = store.value(i);
    const diff::Matrix& g = grads[i];
    m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
    v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    p *= 1.0 - lr * cfg.weight_decay;
    p.array() -= lr * ((m[i].array() / c1) / ((v[i].array() / c2).sqrt() + cfg.adam_eps));
  }
}

// ---- loop -----------------------------------------------------------------------

namespace {

EpochStats run_epoch(model::Model& model, const std::vector<TrainingItem>& items, const TrainConfig& cfg,
                     TrainState& state, std::ofstream* history) {
  if (items.empty()) throw Error(ErrorCode::EmptySet, "train_epoch: no training items");
  EpochStats stats;
  stats.epoch = state.epoch;
  stats.lr = learning_rate(cfg, state.epoch);
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(synth::mix_seed(cfg.seed, static_cast<std::uint64_t>(state.epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  diff::ParamStore& store = model.params();
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    diff::GradientBuffer grads = store.zero_gradients();
    matchloss::LossBreakdown step_loss;
    // Per-sample graphs, gradients summed in batch order.
    for (std::size_t b = start; b < end; ++b) {
      const TrainingItem& item = items[static_cast<std::size_t>(order[b])];
      diff::Graph g;
      const auto pred = model.forward(g, item.cloud, item.seg);
      const auto res = matchloss::total_loss(item.gt, pred, cfg.loss);
      g.backward(res.total);
      g.collect_gradients(store, grads);
      accumulate(step_loss, res.breakdown, 1.0 / static_cast<double>(end - start));
    }
    for (auto& gm : grads) {
      gm /= static_cast<double>(end - start);
      if (!gm.allFinite()) throw Error(ErrorCode::NonFinite, "non-finite gradient");
    }
    state.optimizer.update(store, grads, stats.lr, cfg);
    accumulate(stats.mean, step_loss, 1.0);
    ++stats.steps;
    if (history) {
      nlohmann::json line = breakdown_json(step_loss);
      line["format_version"] = 1;
      line["kind"] = "step";
      line["epoch"] = state.epoch;
      line["step"] = state.optimizer.step;
      *history << line.dump() << '\n';
    }
  }
  const double inv = 1.0 / stats.steps;
  matchloss::LossBreakdown mean;
  accumulate(mean, stats.mean, inv);
  stats.mean = mean;
  ++state.epoch;
  if (history) {
    nlohmann::json line = breakdown_json(stats.mean);
    line["format_version"] = 1;
    line["kind"] = "epoch";
    line["epoch"] = stats.epoch;
    line["lr"] = stats.lr;
    line["steps"] = stats.steps;
    *history << line.dump() << '\n';
    history->flush();
  }
  return stats;
}

}  // namespace

EpochStats train_epoch(model::Model& model, const std::vector<TrainingItem>& items, const TrainConfig& cfg,
                       TrainState& state) {
  cfg.validate();
  return run_epoch(model, items, cfg, state, nullptr);
}

std::vector<EpochStats> fit(model::Model& model, const std::vector<TrainingItem>& items, const TrainConfig& cfg,
                            TrainState& state, const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  std::vector<EpochStats> out;
  std::ofstream history;
  if (!cfg.history_path.empty()) {
    history.open(cfg.history_path, state.epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!history) throw Error(ErrorCode::IoError, "cannot open history file '" + cfg.history_path + "'");
  }
  if (cfg.checkpoint_every > 0) std::filesystem::create_directories(cfg.checkpoint_dir);
  std::string last_good = "none";
  while (state.epoch < cfg.epochs) {
    try {
      out.push_back(run_epoch(model, items, cfg, state, history.is_open() ? &history : nullptr));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFinite) throw;
      throw Error(ErrorCode::NonFinite,
                  e.message() + " in epoch " + std::to_string(state.epoch) + "; last good checkpoint: " +
                      last_good);
    }
    if (on_epoch) on_epoch(out.back());
    if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
      last_good = checkpoint_path(cfg, state.epoch);
      save_checkpoint(last_good, model, state);
    }
  }
  return out;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const std::string& path, const model::Model& model, const TrainState& state) {
  diff::ParamStore all;
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) all.add(p.names()[i], p.value(i));
  if (state.optimizer.m.size() == p.size()) {
    for (std::size_t i = 0; i < p.size(); ++i) all.add("adam.m/" + p.names()[i], state.optimizer.m[i]);
    for (std::size_t i = 0; i < p.size(); ++i) all.add("adam.v/" + p.names()[i], state.optimizer.v[i]);
  }
  auto meta = nlohmann::json::parse(model.config().to_json());
  meta["kind"] = "checkpoint";
  meta["epoch"] = state.epoch;
  meta["step"] = state.optimizer.step;
  all.save(path, meta.dump());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string meta_text;
  const diff::ParamStore all = diff::ParamStore::read(path, &meta_text);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint meta: ") + e.what());
  }
  Checkpoint ck{model::Model(model::ModelConfig::from_json(meta_text)), TrainState{}};
  ck.model.params().load(path);
  ck.state.epoch = meta.value("epoch", 0);
  ck.state.optimizer.step = meta.value("step", 0L);
  const auto& names = ck.model.params().names();
  if (all.contains("adam.m/" + names.front())) {
    for (const auto& n : names) {
      ck.state.optimizer.m.push_back(all.get("adam.m/" + n));
      ck.state.optimizer.v.push_back(all.get("adam.v/" + n));
    }
  }
  return ck;
}

}  // namespace paco::trainer
