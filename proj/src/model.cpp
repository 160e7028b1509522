#include "paco/model.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <random>

#include "paco/spatial.hpp"

namespace paco::model {

namespace {

using diff::add;
using diff::concat;
using diff::matmul;
using diff::mul;
using diff::scale;

constexpr double kPi = std::numbers::pi;

/// M x 1 column repeated into M x n.
Tensor repeat_cols(Graph& g, const Tensor& col, Index n) {
  return matmul(col, g.constant(Matrix::Ones(1, n)));
}

Tensor column(const Tensor& x, Index c) { return diff::slice_cols(x, c, 1); }

}  // namespace

// ---- config ------------------------------------------------------------------

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["feature_dim"] = feature_dim;
  j["encoder_depth"] = encoder_depth;
  j["decoder_depth"] = decoder_depth;
  j["queries"] = queries;
  j["plane_proxies"] = plane_proxies;
  j["points_per_primitive"] = points_per_primitive;
  j["centers"] = centers;
  j["patch_size"] = patch_size;
  j["tau"] = tau;
  j["max_spread_deg"] = max_spread_deg;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
    c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
    c.queries = j.value("queries", c.queries);
    c.plane_proxies = j.value("plane_proxies", c.plane_proxies);
    c.points_per_primitive = j.value("points_per_primitive", c.points_per_primitive);
    c.centers = j.value("centers", c.centers);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.tau = j.value("tau", c.tau);
    c.max_spread_deg = j.value("max_spread_deg", c.max_spread_deg);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model config: ") + e.what());
  }
  if (c.feature_dim <= 0 || c.queries <= 0 || c.plane_proxies <= 0 || c.points_per_primitive <= 4 ||
      c.centers <= 0 || c.patch_size <= 0 || c.encoder_depth < 0 || c.decoder_depth < 0 ||
      !(c.max_spread_deg > 0 && c.max_spread_deg < 90)) {
    throw Error(ErrorCode::FormatError, "model config: out-of-range value");
  }
  return c;
}

// ---- parameters ----------------------------------------------------------------

Model::Model(ModelConfig config) : config_(config) { init_params(); }

void Model::init_params() {
  std::mt19937_64 rng(config_.seed);
  const Index f = config_.feature_dim;
  auto dense = [&](const std::string& name, Index in, Index out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(in, out);
    for (Index k = 0; k < w.size(); ++k) w.data()[k] = u(rng);
    // Nonzero biases: a patch's own center has local offset 0, so a zero
    // first-layer bias would park it exactly on the relu kink.
    Matrix b(1, out);
    for (Index k = 0; k < b.size(); ++k) b.data()[k] = u(rng);
    params_.add(name + ".w", w);
    params_.add(name + ".b", b);
  };
  auto norm = [&](const std::string& name) {
    params_.add(name + ".g", Matrix::Ones(1, f));
    params_.add(name + ".s", Matrix::Zero(1, f));
  };
  auto two_layer = [&](const std::string& name, Index in, Index out) {
    dense(name + ".l1", in, f);
    dense(name + ".l2", f, out);
  };
  auto attn = [&](const std::string& name) {
    for (const char* p : {".q", ".k", ".v", ".o"}) dense(name + p, f, f);
    norm(name + ".ln");
  };
  auto ffn = [&](const std::string& name) {
    dense(name + ".l1", f, 2 * f);
    dense(name + ".l2", 2 * f, f);
    norm(name + ".ln");
  };

  two_layer("enc.point", 3, f);
  two_layer("enc.pos", 3, f);
  for (int b = 0; b < config_.encoder_depth; ++b) {
    attn("enc.block" + std::to_string(b) + ".attn");
    ffn("enc.block" + std::to_string(b) + ".ffn");
  }
  two_layer("proxy.normal", 3, f);
  two_layer("query.input", f, f);
  two_layer("query.global", f, f * config_.queries);
  dense("query.score", f, 1);
  for (int b = 0; b < config_.decoder_depth; ++b) {
    attn("dec.block" + std::to_string(b) + ".attn");
    ffn("dec.block" + std::to_string(b) + ".ffn");
  }
  two_layer("head.plane", f, 3);
  two_layer("head.points", f, 2 * config_.points_per_primitive);
  dense("head.select", f, 1);

  // Spread the initial rays over the cone: sunflower-style radii on the
  // spread angle and evenly spaced azimuths.
  const int t = config_.points_per_primitive;
  Matrix bias(1, 2 * t);
  for (int q = 0; q < t; ++q) {
    const double frac = 0.01 + 0.98 * std::sqrt((q + 0.5) / t);
    bias(0, q) = std::log(frac / (1.0 - frac));
    const double turn = std::fmod(q * 0.6180339887, 1.0);  // golden-angle azimuths
    bias(0, t + q) = std::atanh(0.98 * (2.0 * turn - 1.0));
  }
  params_.set("head.points.l2.b", bias);
}

Tensor Model::linear(Graph& g, const std::string& name, const Tensor& x) const {
  return diff::add_row(matmul(x, g.parameter(params_, name + ".w")), g.parameter(params_, name + ".b"));
}

Tensor Model::mlp2(Graph& g, const std::string& name, const Tensor& x) const {
  return linear(g, name + ".l2", diff::relu(linear(g, name + ".l1", x)));
}

Tensor Model::attention(Graph& g, const std::string& name, const Tensor& q, const Tensor& kv,
                        Matrix* weights) const {
  const Tensor qq = linear(g, name + ".q", q);
  const Tensor kk = linear(g, name + ".k", kv);
  const Tensor vv = linear(g, name + ".v", kv);
  const Tensor logits = scale(matmul(qq, diff::transpose(kk)), 1.0 / std::sqrt(double(config_.feature_dim)));
  const Tensor a = diff::softmax(logits);
  if (weights) *weights = a.value();
  const Tensor out = linear(g, name + ".o", matmul(a, vv));
  return diff::layer_norm(add(q, out), g.parameter(params_, name + ".ln.g"), g.parameter(params_, name + ".ln.s"));
}

Tensor Model::ffn_block(Graph& g, const std::string& name, const Tensor& x) const {
  const Tensor h = mlp2(g, name, x);
  return diff::layer_norm(add(x, h), g.parameter(params_, name + ".ln.g"), g.parameter(params_, name + ".ln.s"));
}

// ---- stages --------------------------------------------------------------------

PointProxies Model::encode_point_proxies(Graph& g, const PointList& cloud) const {
  if (cloud.empty()) throw Error(ErrorCode::EmptySet, "encode_point_proxies: empty cloud");
  for (const auto& p : cloud) {
    if (!p.allFinite()) throw Error(ErrorCode::NonFinite, "encode_point_proxies: non-finite input point");
  }
  PointProxies out;
  out.centers = farthest_point_sampling(cloud, config_.centers);
  const KdTree tree(cloud);
  const int c = static_cast<int>(out.centers.size());
  const int k = std::min<int>(config_.patch_size, static_cast<int>(cloud.size()));
  Matrix local(static_cast<Index>(c) * k, 3), centers(c, 3);
  std::vector<int> patch_of(static_cast<std::size_t>(c) * k);
  for (int i = 0; i < c; ++i) {
    const Point3& ctr = cloud[static_cast<std::size_t>(out.centers[static_cast<std::size_t>(i)])];
    centers.row(i) = ctr.transpose();
    const auto nbrs = tree.knn(ctr, k);
    for (int q = 0; q < k; ++q) {
      local.row(static_cast<Index>(i) * k + q) = (cloud[static_cast<std::size_t>(nbrs[q].index)] - ctr).transpose();
      patch_of[static_cast<std::size_t>(i) * k + q] = i;
    }
  }
  const Tensor per_point = mlp2(g, "enc.point", g.constant(local));
  Tensor x = add(diff::group_max(per_point, patch_of, c), mlp2(g, "enc.pos", g.constant(centers)));
  for (int b = 0; b < config_.encoder_depth; ++b) {
    const std::string name = "enc.block" + std::to_string(b);
    x = attention(g, name + ".attn", x, x, nullptr);
    x = ffn_block(g, name + ".ffn", x);
  }
  out.features = x;
  return out;
}

PlaneProxies Model::build_plane_proxies(Graph& g, const PointProxies& proxies, const segment::Segmentation& seg,
                                        std::size_t point_count) const {
  const int k = config_.plane_proxies;
  const std::vector<int> labels = seg.labels(point_count);
  bool any_unassigned = false;
  for (int ci : proxies.centers) any_unassigned = any_unassigned || labels[static_cast<std::size_t>(ci)] < 0;

  // Largest segments first (ties: lower index); the null bucket takes a slot.
  std::vector<int> order(seg.segments.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return seg.segments[static_cast<std::size_t>(a)].members.size() >
           seg.segments[static_cast<std::size_t>(b)].members.size();
  });
  // Centers of segments dropped by the cap also need the null bucket.
  if (order.size() > static_cast<std::size_t>(k)) any_unassigned = true;
  const std::size_t capacity = static_cast<std::size_t>(any_unassigned ? k - 1 : k);
  if (order.size() > capacity) order.resize(capacity);
  std::vector<int> row_of(seg.segments.size(), -1);
  for (std::size_t r = 0; r < order.size(); ++r) row_of[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
  const int real = static_cast<int>(order.size());

  PlaneProxies out;
  out.source.assign(static_cast<std::size_t>(k), PlaneProxies::kPadding);
  for (int r = 0; r < real; ++r) out.source[static_cast<std::size_t>(r)] = order[static_cast<std::size_t>(r)];
  const int null_row = any_unassigned ? real : -1;
  if (null_row >= 0) out.source[static_cast<std::size_t>(null_row)] = PlaneProxies::kNullBucket;

  // Each point proxy joins the plane proxy of its center's segment; centers
  // whose segment was dropped by the cap fall into the null bucket too.
  std::vector<int> groups(proxies.centers.size());
  for (std::size_t i = 0; i < proxies.centers.size(); ++i) {
    const int s = labels[static_cast<std::size_t>(proxies.centers[i])];
    const int row = s >= 0 ? row_of[static_cast<std::size_t>(s)] : -1;
    groups[i] = row >= 0 ? row : null_row;
  }
  Tensor pooled = diff::group_sum(proxies.features, groups, k);
  if (real > 0) {
    Matrix normals(real, 3);
    for (int r = 0; r < real; ++r) {
      normals.row(r) = seg.segments[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])].plane.n.transpose();
    }
    Tensor emb = mlp2(g, "proxy.normal", g.constant(normals));
    if (real < k) {
      const Tensor parts[] = {emb, g.constant(Matrix::Zero(k - real, config_.feature_dim))};
      emb = concat(parts, 0);
    }
    pooled = add(pooled, emb);
  }
  out.features = pooled;
  return out;
}

Queries Model::generate_queries(Graph& g, const Tensor& v) const {
  const int m = config_.queries;
  const Tensor qi = mlp2(g, "query.input", v);
  const std::vector<int> all_zero(static_cast<std::size_t>(v.rows()), 0);
  const Tensor global = diff::group_max(v, all_zero, 1);
  const Tensor qg = diff::reshape(mlp2(g, "query.global", global), m, config_.feature_dim);
  const Tensor parts[] = {qi, qg};
  const Tensor candidates = concat(parts, 0);
  Queries out;
  out.scores = linear(g, "query.score", candidates);
  const Matrix& s = out.scores.value();
  std::vector<int> order(static_cast<std::size_t>(s.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s(a, 0) > s(b, 0); });
  order.resize(static_cast<std::size_t>(m));
  out.selected = order;
  // Gate each selected query by its score so the ranking head is trained.
  const Tensor gate = diff::sigmoid(diff::gather_rows(out.scores, order));
  out.features = mul(diff::gather_rows(candidates, order), repeat_cols(g, gate, config_.feature_dim));
  return out;
}

Decoded Model::decode_proxies(Graph& g, const Tensor& v, const Tensor& q) const {
  Decoded out;
  Tensor x = q;
  for (int b = 0; b < config_.decoder_depth; ++b) {
    const std::string name = "dec.block" + std::to_string(b);
    Matrix w;
    x = attention(g, name + ".attn", x, v, &w);
    out.attention.push_back(std::move(w));
    x = ffn_block(g, name + ".ffn", x);
  }
  out.features = x;
  return out;
}

PlaneHeads Model::estimate_parameters(Graph& g, const Tensor& proxies) const {
  const Tensor h = mlp2(g, "head.plane", proxies);
  PlaneHeads out;
  out.r = diff::softplus(column(h, 0));
  out.theta = scale(diff::sigmoid(column(h, 1)), kPi);
  out.phi = scale(diff::tanh(column(h, 2)), kPi);
  return out;
}

Distribution Model::distribute_points(Graph& g, const Tensor& proxies, const PlaneHeads& planes) const {
  const Index t = config_.points_per_primitive;
  const Index m = proxies.rows();
  const Tensor h = mlp2(g, "head.points", proxies);
  const double alpha_max = config_.max_spread_deg * kPi / 180.0;
  const Tensor alpha = scale(diff::sigmoid(diff::slice_cols(h, 0, t)), alpha_max);
  const Tensor beta = scale(diff::tanh(diff::slice_cols(h, t, t)), kPi);

  // Orthonormal frame per plane: normal u and the two tangent directions.
  const Tensor st = diff::sin(planes.theta), ct = diff::cos(planes.theta);
  const Tensor sp = diff::sin(planes.phi), cp = diff::cos(planes.phi);
  const Tensor u[3] = {mul(st, cp), mul(st, sp), ct};
  const Tensor e_theta[3] = {mul(ct, cp), mul(ct, sp), scale(st, -1.0)};
  const Tensor e_phi[3] = {scale(sp, -1.0), cp, g.constant(Matrix::Zero(m, 1))};

  // Ray w = cos(a) u + sin(a) (cos(b) e_theta + sin(b) e_phi), as angles.
  const Tensor ca = diff::cos(alpha), sa = diff::sin(alpha);
  const Tensor sacb = mul(sa, diff::cos(beta)), sasb = mul(sa, diff::sin(beta));
  Tensor w[3];
  for (int c = 0; c < 3; ++c) {
    w[c] = add(add(mul(ca, repeat_cols(g, u[c], t)), mul(sacb, repeat_cols(g, e_theta[c], t))),
               mul(sasb, repeat_cols(g, e_phi[c], t)));
  }
  const Tensor rho = diff::sqrt(add(mul(w[0], w[0]), mul(w[1], w[1])));
  Tensor theta_ij = diff::atan2(rho, w[2]);
  Tensor phi_ij = diff::atan2(w[1], w[0]);

  const Tensor theta_i = repeat_cols(g, planes.theta, t);
  const Tensor phi_i = repeat_cols(g, planes.phi, t);
  auto denominator = [&](const Tensor& th, const Tensor& ph) {
    return add(mul(mul(diff::cos(diff::sub(ph, phi_i)), diff::sin(th)), repeat_cols(g, st, t)),
               mul(diff::cos(th), repeat_cols(g, ct, t)));
  };
  Tensor d = denominator(theta_ij, phi_ij);
  Distribution out;
  std::vector<bool> parallel(static_cast<std::size_t>(m * t));
  for (Index k = 0; k < m * t; ++k) {
    parallel[static_cast<std::size_t>(k)] = std::abs(d.value().data()[k]) < tol::kDenominator;
    out.fallback_count += parallel[static_cast<std::size_t>(k)] ? 1 : 0;
  }
  if (out.fallback_count > 0) {
    theta_ij = diff::where(parallel, theta_i, theta_ij);
    phi_ij = diff::where(parallel, phi_i, phi_ij);
    d = denominator(theta_ij, phi_ij);
  }
  const Tensor r_ij = diff::div(repeat_cols(g, planes.r, t), d);
  const Tensor s_ij = diff::sin(theta_ij);
  const Tensor xyz[3] = {mul(r_ij, mul(s_ij, diff::cos(phi_ij))), mul(r_ij, mul(s_ij, diff::sin(phi_ij))),
                         mul(r_ij, diff::cos(theta_ij))};
  const Tensor cols[3] = {diff::reshape(xyz[0], m * t, 1), diff::reshape(xyz[1], m * t, 1),
                          diff::reshape(xyz[2], m * t, 1)};
  out.theta = theta_ij;
  out.phi = phi_ij;
  out.points = concat(cols, 1);
  return out;
}

Tensor Model::select_confidences(Graph& g, const Tensor& proxies) const {
  return diff::sigmoid(linear(g, "head.select", proxies));
}

matchloss::PredictionTensors Model::forward(Graph& g, const PointList& cloud, const segment::Segmentation& seg) const {
  const PointProxies pp = encode_point_proxies(g, cloud);
  const PlaneProxies v = build_plane_proxies(g, pp, seg, cloud.size());
  const Queries q = generate_queries(g, v.features);
  const Decoded dec = decode_proxies(g, v.features, q.features);
  const PlaneHeads planes = estimate_parameters(g, dec.features);
  const Distribution dist = distribute_points(g, dec.features, planes);
  matchloss::PredictionTensors out;
  out.theta = planes.theta;
  out.phi = planes.phi;
  out.r = planes.r;
  out.points = dist.points;
  out.kappa = select_confidences(g, dec.features);
  out.count = config_.queries;
  out.offsets = matchloss::PredictionTensors::uniform_offsets(config_.queries, config_.points_per_primitive);
  return out;
}

PrimitiveList Model::predict(const PointList& cloud, const segment::Segmentation& seg) const {
  Graph g;
  return forward(g, cloud, seg).values();
}

void Model::save(const std::string& path) const { params_.save(path, config_.to_json()); }

Model Model::load(const std::string& path) {
  std::string meta;
  diff::ParamStore::read(path, &meta);
  Model m(ModelConfig::from_json(meta));
  m.params_.load(path);
  return m;
}

PrimitiveList select(const PrimitiveList& predictions, double tau) {
  PrimitiveList out;
  for (const auto& p : predictions) {
    if (p.confidence >= tau) out.push_back(p);
  }
  return out;
}

}  // namespace paco::model
