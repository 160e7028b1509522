#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "paco/diff.hpp"
#include "paco/matchloss.hpp"
#include "paco/primitive.hpp"
#include "paco/segment.hpp"

// Toy-scale parametric completion network: point proxies from FPS patches,
// plane proxies pooled per segment, ranked queries refined by cross-attention,
// and heads for polar plane parameters, inlier points and confidence.

namespace paco::model {

using diff::Graph;
using diff::Matrix;
using diff::Tensor;
using diff::Index;

struct ModelConfig {
  int feature_dim = 64;
  int encoder_depth = 2;
  int decoder_depth = 2;
  int queries = 40;               // M
  int plane_proxies = 20;         // K
  int points_per_primitive = 128; // T
  int centers = 128;
  int patch_size = 32;
  double tau = 0.5;
  /// Largest angle between a distributed point's ray and the plane normal.
  double max_spread_deg = 85.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  /// Missing keys keep their defaults. Throws FormatError on malformed input.
  static ModelConfig from_json(const std::string& text);
};

struct PointProxies {
  std::vector<int> centers;  // indices into the input cloud
  Tensor features;           // centers x F
};

struct PlaneProxies {
  Tensor features;            // K x F
  /// Segment index per row; kNullBucket for the unassigned bucket, kPadding for padding.
  std::vector<int> source;
  static constexpr int kNullBucket = -1;
  static constexpr int kPadding = -2;
};

struct Queries {
  Tensor features;            // M x F, scaled by sigmoid(score)
  Tensor scores;              // (K + M) x 1, candidate scores
  std::vector<int> selected;  // candidate indices, best first
};

struct Decoded {
  Tensor features;                 // M x F
  std::vector<Matrix> attention;   // per block, M x K
};

struct PlaneHeads {
  Tensor r, theta, phi;  // M x 1 each
};

struct Distribution {
  Tensor theta, phi;  // M x T point-ray angles
  Tensor points;      // (M*T) x 3, primitive j owns rows [j*T, (j+1)*T)
  int fallback_count = 0;
};

class Model {
 public:
  explicit Model(ModelConfig config = {});

  const ModelConfig& config() const { return config_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }

  PointProxies encode_point_proxies(Graph& g, const PointList& cloud) const;
  PlaneProxies build_plane_proxies(Graph& g, const PointProxies& proxies, const segment::Segmentation& seg,
                                   std::size_t point_count) const;
  Queries generate_queries(Graph& g, const Tensor& v) const;
  Decoded decode_proxies(Graph& g, const Tensor& v, const Tensor& q) const;
  PlaneHeads estimate_parameters(Graph& g, const Tensor& proxies) const;
  Distribution distribute_points(Graph& g, const Tensor& proxies, const PlaneHeads& planes) const;
  Tensor select_confidences(Graph& g, const Tensor& proxies) const;

  /// Full pipeline on one cloud and its segmentation.
  matchloss::PredictionTensors forward(Graph& g, const PointList& cloud, const segment::Segmentation& seg) const;
  /// Detached forward: all M primitives with confidences.
  PrimitiveList predict(const PointList& cloud, const segment::Segmentation& seg) const;

  /// Weights plus config (as meta) in the ParamStore format.
  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  void init_params();
  Tensor linear(Graph& g, const std::string& name, const Tensor& x) const;
  Tensor mlp2(Graph& g, const std::string& name, const Tensor& x) const;
  Tensor attention(Graph& g, const std::string& name, const Tensor& q, const Tensor& kv, Matrix* weights) const;
  Tensor ffn_block(Graph& g, const std::string& name, const Tensor& x) const;

  ModelConfig config_;
  diff::ParamStore params_;
};

/// Keeps primitives with confidence >= tau, in order.
PrimitiveList select(const PrimitiveList& predictions, double tau);

}  // namespace paco::model
