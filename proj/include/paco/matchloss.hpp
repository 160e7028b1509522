#pragma once

#include <Eigen/Core>
#include <vector>

#include "paco/diff.hpp"
#include "paco/primitive.hpp"

// Set matching between predicted and ∅-padded ground-truth primitives, and
// the training objectives evaluated on the matched pairs.

namespace paco::matchloss {

struct LossWeights {
  double beta1 = 1.0;   // normal
  double beta2 = 20.0;  // per-primitive chamfer
  double beta3 = 2.0;   // repulsion
  double beta4 = 20.0;  // whole-object chamfer
  double lambda = 1.0;
  double omega = 100.0;
  int k = 4;
  double null_weight = 0.4;
  /// Divide each primitive's repulsion sum by its point count. Without this
  /// the sum over T*k neighbor pairs dwarfs the chamfer terms.
  bool rep_mean = true;
};

inline constexpr double kConfidenceClamp = 1e-7;

/// Averaged L1-of-L2 chamfer. Throws EmptySet if either side is empty.
double chamfer(const PointList& a, const PointList& b);
/// Differentiable chamfer between n x 3 and m x 3 tensors.
diff::Tensor chamfer(const diff::Tensor& a, const diff::Tensor& b);

double loss_cls(double kappa, bool is_real, double null_weight = 0.4);
/// Throws NonUnit unless both normals are unit within 1e-9.
double loss_norm(const Point3& n, const Point3& n_hat, double lambda);
double loss_cp(const PointList& gt, const PointList& pred);
/// Sum over points of -d * exp(-omega d^2) over each point's k nearest
/// neighbors. Throws TooFewPoints unless there are more than k points.
double loss_rep(const PointList& points, int k, double omega);
/// Same energy; neighbor sets are chosen on the current values.
diff::Tensor loss_rep(const diff::Tensor& points, int k, double omega);

/// Minimum-cost assignment; result[row] = column. Among optimal assignments
/// the lexicographically smallest is returned. Throws NonFinite.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);
double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& sigma);

struct MatchResult {
  std::vector<int> sigma;        // prediction index per ground-truth slot
  Eigen::MatrixXd cost;          // slots x predictions
  std::vector<bool> is_real;     // per slot
};

/// Slot i < gt.size() holds gt[i]; the remaining slots up to pred.size() are ∅.
/// Throws ShapeMismatch when there are more ground-truth primitives than predictions.
Eigen::MatrixXd cost_matrix(const PrimitiveList& gt, const PrimitiveList& pred, const LossWeights& w = {});
MatchResult match(const PrimitiveList& gt, const PrimitiveList& pred, const LossWeights& w = {});

/// Whole-object chamfer between the union of ground-truth points and the
/// union of predictions matched to real slots.
double loss_co(const PrimitiveList& gt, const PrimitiveList& pred, const MatchResult& m);

struct LossBreakdown {
  double cls = 0, norm = 0, cp = 0, co = 0, rep = 0, total = 0;
};

/// Differentiable view of a prediction set.
struct PredictionTensors {
  diff::Tensor theta;   // M x 1
  diff::Tensor phi;     // M x 1
  diff::Tensor r;       // M x 1
  diff::Tensor points;  // N x 3, primitive j owns rows [offsets[j], offsets[j+1])
  diff::Tensor kappa;   // M x 1
  int count = 0;
  std::vector<int> offsets;

  static std::vector<int> uniform_offsets(int count, int points_per_primitive);

  /// Detached values as primitives (confidence = kappa).
  PrimitiveList values() const;
};

/// Wraps fixed primitives (e.g. ground truth) as constant prediction tensors.
PredictionTensors as_tensors(diff::Graph& g, const PrimitiveList& prims);

struct LossResult {
  LossBreakdown breakdown;
  diff::Tensor total;
  diff::Tensor cls, norm, cp, co, rep;  // unweighted terms
  MatchResult match;
};

/// Matches on detached costs, then builds the differentiable total.
LossResult total_loss(const PrimitiveList& gt, const PredictionTensors& pred, const LossWeights& w = {});

}  // namespace paco::matchloss
