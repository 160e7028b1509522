#include "paco/matchloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "paco/spatial.hpp"

namespace paco::matchloss {

using diff::Graph;
using diff::Matrix;
using diff::Tensor;

namespace {

double directed_mean(const PointList& from, const KdTree& to) {
  double s = 0;
  for (const auto& p : from) s += std::sqrt(to.nearest(p).squared_distance);
  return s / static_cast<double>(from.size());
}

Matrix to_matrix(const PointList& pts) {
  Matrix m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return m;
}

PointList to_points(const Matrix& m, Eigen::Index begin, Eigen::Index count) {
  PointList out(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = m.row(begin + i).transpose();
  return out;
}

double clamp_kappa(double k) { return std::clamp(k, kConfidenceClamp, 1.0 - kConfidenceClamp); }

double rep_value(const PointList& pts, const LossWeights& w) {
  const double e = loss_rep(pts, w.k, w.omega);
  return w.rep_mean ? e / static_cast<double>(pts.size()) : e;
}

}  // namespace

double chamfer(const PointList& a, const PointList& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySet, "chamfer of an empty set");
  const KdTree ta(a), tb(b);
  return 0.5 * (directed_mean(a, tb) + directed_mean(b, ta));
}

Tensor chamfer(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error(ErrorCode::EmptySet, "chamfer of an empty set");
  return diff::scale(diff::add(diff::mean(diff::nearest_distance(a, b)), diff::mean(diff::nearest_distance(b, a))),
                     0.5);
}

double loss_cls(double kappa, bool is_real, double null_weight) {
  const double k = clamp_kappa(kappa);
  return is_real ? -std::log(k) : -null_weight * std::log(1.0 - k);
}

double loss_norm(const Point3& n, const Point3& n_hat, double lambda) {
  if (std::abs(n.norm() - 1.0) > 1e-9 || std::abs(n_hat.norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::NonUnit, "loss_norm expects unit normals");
  }
  return lambda * (1.0 - n.dot(n_hat)) + (n - n_hat).squaredNorm();
}

double loss_cp(const PointList& gt, const PointList& pred) { return chamfer(gt, pred); }

double loss_rep(const PointList& points, int k, double omega) {
  if (static_cast<int>(points.size()) <= k) {
    throw Error(ErrorCode::TooFewPoints, "repulsion needs more than k points");
  }
  const auto graph = knn_graph(points, k);
  double s = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int j : graph[i]) {
      const double d = (points[static_cast<std::size_t>(j)] - points[i]).norm();
      s -= d * std::exp(-omega * d * d);
    }
  }
  return s;
}

Tensor loss_rep(const Tensor& points, int k, double omega) {
  const Matrix& v = points.value();
  if (v.rows() <= k) throw Error(ErrorCode::TooFewPoints, "repulsion needs more than k points");
  const auto graph = knn_graph(to_points(v, 0, v.rows()), k);
  std::vector<int> self, other;
  self.reserve(graph.size() * static_cast<std::size_t>(k));
  other.reserve(self.capacity());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (int j : graph[i]) {
      self.push_back(static_cast<int>(i));
      other.push_back(j);
    }
  }
  const Tensor diffs = diff::sub(diff::gather_rows(points, other), diff::gather_rows(points, self));
  const Tensor d2 = diff::square_norm(diffs);
  const Tensor d = diff::sqrt(d2);
  return diff::scale(diff::sum(diff::mul(d, diff::exp(diff::scale(d2, -omega)))), -1.0);
}

// ---- assignment --------------------------------------------------------------

namespace {

/// Shortest-augmenting-path Hungarian with potentials; u/v satisfy
/// cost(i,j) - u(i) - v(j) >= 0 with equality on the returned matching.
void solve_assignment(const Eigen::MatrixXd& c, std::vector<int>& row_to_col, std::vector<double>& u,
                      std::vector<double>& v) {
  const int n = static_cast<int>(c.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> uu(n + 1, 0.0), vv(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - uu[i0] - vv[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          uu[p[j]] += delta;
          vv[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  u.assign(uu.begin() + 1, uu.end());
  v.assign(vv.begin() + 1, vv.end());
}

}  // namespace

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw Error(ErrorCode::ShapeMismatch, "hungarian needs a square matrix");
  if (!cost.allFinite()) throw Error(ErrorCode::NonFinite, "hungarian: non-finite cost");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  std::vector<int> row_to_col;
  std::vector<double> u, v;
  solve_assignment(cost, row_to_col, u, v);

  // Every optimal assignment uses only edges with zero reduced cost, so the
  // lexicographically smallest optimum is the lexicographically smallest
  // perfect matching of this tight-edge graph.
  const double tol = 1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());
  std::vector<std::vector<int>> tight(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (cost(i, j) - u[i] - v[j] <= tol) tight[i].push_back(j);
    }
  }
  std::vector<int> col_to_row(n);
  for (int i = 0; i < n; ++i) col_to_row[row_to_col[i]] = i;

  std::vector<char> visited(n);
  // Rows <= `fixed` are frozen; re-routes `row` so it ends on column `target`.
  auto reroute = [&](auto&& self, int row, int target, int fixed) -> bool {
    for (int c : tight[row]) {
      if (visited[c]) continue;
      visited[c] = 1;
      const int owner = col_to_row[c];
      if (c == target || (owner > fixed && self(self, owner, target, fixed))) {
        row_to_col[row] = c;
        col_to_row[c] = row;
        return true;
      }
    }
    return false;
  };

  for (int i = 0; i < n; ++i) {
    for (int j : tight[i]) {
      if (j == row_to_col[i]) break;  // current column is the smallest feasible
      const int owner = col_to_row[j];
      if (owner < i) continue;  // held by a frozen row
      const int freed = row_to_col[i];
      // Tentatively give j to row i; the displaced row must reach `freed`.
      std::fill(visited.begin(), visited.end(), 0);
      visited[j] = 1;
      const std::vector<int> saved_r2c = row_to_col;
      const std::vector<int> saved_c2r = col_to_row;
      row_to_col[i] = j;
      col_to_row[j] = i;
      col_to_row[freed] = -1;
      if (reroute(reroute, owner, freed, i)) break;
      row_to_col = saved_r2c;
      col_to_row = saved_c2r;
    }
  }
  return row_to_col;
}

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& sigma) {
  double s = 0;
  for (std::size_t i = 0; i < sigma.size(); ++i) s += cost(static_cast<Eigen::Index>(i), sigma[i]);
  return s;
}

// ---- matching on detached values -------------------------------------------

Eigen::MatrixXd cost_matrix(const PrimitiveList& gt, const PrimitiveList& pred, const LossWeights& w) {
  const Eigen::Index m = static_cast<Eigen::Index>(pred.size());
  if (gt.size() > pred.size()) {
    throw Error(ErrorCode::ShapeMismatch, "more ground-truth primitives than predictions");
  }
  Eigen::MatrixXd c(m, m);
  std::vector<double> rep(pred.size());
  std::vector<KdTree> pred_trees;
  pred_trees.reserve(pred.size());
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (!gt.empty()) rep[j] = rep_value(pred[j].points, w);
    pred_trees.emplace_back(pred[j].points);
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool real = i < static_cast<Eigen::Index>(gt.size());
    if (!real) {
      for (Eigen::Index j = 0; j < m; ++j) c(i, j) = loss_cls(pred[j].confidence, false, w.null_weight);
      continue;
    }
    const PlanePrimitive& g = gt[static_cast<std::size_t>(i)];
    const KdTree gt_tree(g.points);
    const Point3 n = g.normal();
    for (Eigen::Index j = 0; j < m; ++j) {
      const PlanePrimitive& p = pred[static_cast<std::size_t>(j)];
      const double cp = 0.5 * (directed_mean(g.points, pred_trees[static_cast<std::size_t>(j)]) +
                               directed_mean(p.points, gt_tree));
      c(i, j) = loss_cls(p.confidence, true, w.null_weight) + w.beta1 * loss_norm(n, p.normal(), w.lambda) +
                w.beta2 * cp + w.beta3 * rep[static_cast<std::size_t>(j)];
    }
  }
  return c;
}

MatchResult match(const PrimitiveList& gt, const PrimitiveList& pred, const LossWeights& w) {
  MatchResult r;
  r.cost = cost_matrix(gt, pred, w);
  r.sigma = hungarian(r.cost);
  r.is_real.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) r.is_real[i] = i < gt.size();
  return r;
}

double loss_co(const PrimitiveList& gt, const PrimitiveList& pred, const MatchResult& m) {
  PointList g, p;
  for (std::size_t i = 0; i < m.sigma.size(); ++i) {
    if (!m.is_real[i]) continue;
    g.insert(g.end(), gt[i].points.begin(), gt[i].points.end());
    const auto& pp = pred[static_cast<std::size_t>(m.sigma[i])].points;
    p.insert(p.end(), pp.begin(), pp.end());
  }
  if (g.empty() || p.empty()) throw Error(ErrorCode::EmptySet, "loss_co: no matched real primitives");
  return chamfer(g, p);
}

// ---- differentiable total ---------------------------------------------------

std::vector<int> PredictionTensors::uniform_offsets(int count, int points_per_primitive) {
  std::vector<int> o(static_cast<std::size_t>(count) + 1);
  for (int j = 0; j <= count; ++j) o[static_cast<std::size_t>(j)] = j * points_per_primitive;
  return o;
}

PrimitiveList PredictionTensors::values() const {
  if (static_cast<int>(offsets.size()) != count + 1 || offsets.back() != points.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction offsets do not cover the point rows");
  }
  PrimitiveList out(static_cast<std::size_t>(count));
  const Matrix& th = theta.value();
  const Matrix& ph = phi.value();
  const Matrix& rr = r.value();
  const Matrix& pts = points.value();
  const Matrix& kp = kappa.value();
  for (int j = 0; j < count; ++j) {
    auto& p = out[static_cast<std::size_t>(j)];
    p.plane = {rr(j, 0), th(j, 0), ph(j, 0)};
    p.points = to_points(pts, offsets[static_cast<std::size_t>(j)],
                         offsets[static_cast<std::size_t>(j) + 1] - offsets[static_cast<std::size_t>(j)]);
    p.confidence = kp(j, 0);
  }
  return out;
}

PredictionTensors as_tensors(Graph& g, const PrimitiveList& prims) {
  PredictionTensors t;
  t.count = static_cast<int>(prims.size());
  Matrix th(t.count, 1), ph(t.count, 1), rr(t.count, 1), kp(t.count, 1);
  PointList all;
  t.offsets.push_back(0);
  for (int j = 0; j < t.count; ++j) {
    const auto& p = prims[static_cast<std::size_t>(j)];
    th(j, 0) = p.plane.theta;
    ph(j, 0) = p.plane.phi;
    rr(j, 0) = p.plane.r;
    kp(j, 0) = p.confidence;
    all.insert(all.end(), p.points.begin(), p.points.end());
    t.offsets.push_back(static_cast<int>(all.size()));
  }
  t.theta = g.constant(th);
  t.phi = g.constant(ph);
  t.r = g.constant(rr);
  t.kappa = g.constant(kp);
  t.points = g.constant(to_matrix(all));
  return t;
}

LossResult total_loss(const PrimitiveList& gt, const PredictionTensors& pred, const LossWeights& w) {
  if (gt.empty()) throw Error(ErrorCode::EmptySet, "total_loss: no ground-truth primitives");
  LossResult out;
  const PrimitiveList values = pred.values();
  out.match = match(gt, values, w);
  const auto& sigma = out.match.sigma;
  Graph& g = *pred.kappa.graph();
  const int m = pred.count;

  // Which slot each prediction landed in.
  std::vector<int> slot_of(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) slot_of[static_cast<std::size_t>(sigma[static_cast<std::size_t>(i)])] = i;

  // Classification over all predictions.
  const Matrix& kv = pred.kappa.value();
  std::vector<bool> in_range(static_cast<std::size_t>(m)), real(static_cast<std::size_t>(m));
  Matrix clamped(m, 1);
  for (int j = 0; j < m; ++j) {
    in_range[static_cast<std::size_t>(j)] = kv(j, 0) > kConfidenceClamp && kv(j, 0) < 1.0 - kConfidenceClamp;
    clamped(j, 0) = clamp_kappa(kv(j, 0));
    real[static_cast<std::size_t>(j)] = slot_of[static_cast<std::size_t>(j)] < static_cast<int>(gt.size());
  }
  const Tensor kc = diff::where(in_range, pred.kappa, g.constant(clamped));
  const Tensor pos = diff::scale(diff::log(kc), -1.0);
  const Tensor neg = diff::scale(diff::log(diff::add_scalar(diff::scale(kc, -1.0), 1.0)), -w.null_weight);
  const Tensor cls = diff::sum(diff::where(real, pos, neg));

  // Geometric terms on real-matched pairs, in slot order.
  const Tensor normals = [&] {
    const Tensor st = diff::sin(pred.theta);
    const Tensor parts[] = {diff::mul(st, diff::cos(pred.phi)), diff::mul(st, diff::sin(pred.phi)),
                            diff::cos(pred.theta)};
    return diff::concat(parts, 1);
  }();
  std::vector<int> matched;
  Matrix gt_normals(static_cast<Eigen::Index>(gt.size()), 3);
  Tensor cp = g.constant(0.0), rep = g.constant(0.0);
  std::vector<int> union_rows;
  PointList gt_union;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int j = sigma[i];
    matched.push_back(j);
    gt_normals.row(static_cast<Eigen::Index>(i)) = gt[i].normal().transpose();
    const int begin = pred.offsets[static_cast<std::size_t>(j)];
    const int len = pred.offsets[static_cast<std::size_t>(j) + 1] - begin;
    const Tensor pts = diff::slice_rows(pred.points, begin, len);
    cp = diff::add(cp, chamfer(g.constant(to_matrix(gt[i].points)), pts));
    Tensor r = loss_rep(pts, w.k, w.omega);
    if (w.rep_mean) r = diff::scale(r, 1.0 / len);
    rep = diff::add(rep, r);
    for (int q = 0; q < len; ++q) union_rows.push_back(begin + q);
    gt_union.insert(gt_union.end(), gt[i].points.begin(), gt[i].points.end());
  }
  const Tensor n_hat = diff::gather_rows(normals, matched);
  const Tensor n = g.constant(gt_normals);
  const Tensor cosines = diff::sum_cols(diff::mul(n, n_hat));
  const Tensor norm = diff::add(diff::scale(diff::sum(diff::add_scalar(diff::scale(cosines, -1.0), 1.0)), w.lambda),
                                diff::sum(diff::square_norm(diff::sub(n, n_hat))));
  const Tensor co = chamfer(g.constant(to_matrix(gt_union)), diff::gather_rows(pred.points, union_rows));

  out.total = diff::add(diff::add(diff::add(cls, diff::scale(norm, w.beta1)), diff::scale(cp, w.beta2)),
                        diff::add(diff::scale(rep, w.beta3), diff::scale(co, w.beta4)));
  out.cls = cls;
  out.norm = norm;
  out.cp = cp;
  out.co = co;
  out.rep = rep;
  auto& b = out.breakdown;
  b.cls = cls.item();
  b.norm = norm.item();
  b.cp = cp.item();
  b.rep = rep.item();
  b.co = co.item();
  b.total = out.total.item();
  return out;
}

}  // namespace paco::matchloss
