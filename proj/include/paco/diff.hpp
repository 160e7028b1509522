#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "paco/error.hpp"

// Minimal reverse-mode automatic differentiation over dense 2D arrays.
//
// A Graph records every forward op as a node holding its value, a lazily
// allocated gradient, and a closure that pushes the node's gradient to its
// inputs. Nodes are created in topological order, so backward() is a single
// reverse sweep. Broadcasting is limited to a 1x1 operand combined with a
// tensor, plus the explicit row-vector ops (add_row, scale_shift, layer_norm).

namespace paco::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Graph;
class ParamStore;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Gradient accumulated by backward(); zeros if nothing reached this node.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  /// Value of a 1x1 tensor.
  double item() const;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Gradients of every parameter in a ParamStore, same order and shapes.
using GradientBuffer = std::vector<Matrix>;

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Matrix value);
  Tensor constant(double value);
  /// Leaf that receives gradients.
  Tensor variable(Matrix value);
  /// Leaf bound to a stored parameter; its gradient can be collected into a
  /// GradientBuffer. Repeated calls with the same name return the same node.
  Tensor parameter(const ParamStore& store, const std::string& name);

  /// Creates a node. `backward` may be empty when no input needs gradients.
  Tensor make(Matrix value, std::span<const Tensor> inputs, BackwardFn backward, const char* op);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the graph in reverse.
  /// Throws NotScalar unless loss is 1x1.
  void backward(const Tensor& loss);

  /// Adds parameter gradients into `buffer` (sized to the store on demand).
  void collect_gradients(const ParamStore& store, GradientBuffer& buffer) const;

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  /// Adds `g` into the gradient of node `id` (no-op if it needs no gradient).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
};

/// Named parameters with stable identity and immutable shapes.
class ParamStore {
 public:
  /// Registers a parameter. Throws ShapeMismatch if the name exists.
  void add(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const;
  const Matrix& get(const std::string& name) const { return values_[index_of(name)]; }
  /// Overwrites a value; shape must match.
  void set(const std::string& name, const Matrix& value);

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  std::size_t parameter_count() const;

  GradientBuffer zero_gradients() const;

  /// Flat little-endian float64 payload behind a JSON header: an 8-byte
  /// little-endian header length, the header
  /// {"format_version", "params": [{"name", "shape", "offset"}], "meta"},
  /// then the payload. `meta` is free-form JSON text ("{}" when empty).
  void save(const std::string& path, const std::string& meta_json = "{}") const;
  /// Loads values into already-registered parameters (names and shapes must
  /// match; FormatError names the offending parameter). Returns meta JSON.
  std::string load(const std::string& path);
  /// Loads every parameter in the file into an empty store.
  static ParamStore read(const std::string& path, std::string* meta_json = nullptr);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- forward ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Index rows, Index cols);

/// Concatenation along rows (axis 0) or columns (axis 1).
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor slice_rows(const Tensor& x, Index start, Index count);
/// out.row(i) = x.row(indices[i]).
Tensor gather_rows(const Tensor& x, std::span<const int> indices);
/// out.row(g) = sum of x rows with groups[i] == g; rows with group < 0 are dropped.
Tensor group_sum(const Tensor& x, std::span<const int> groups, Index group_count);
/// Column-wise max over rows of each group; empty groups yield zeros.
Tensor group_max(const Tensor& x, std::span<const int> groups, Index group_count);
/// Picks a where mask is true, else b (mask row-major, same shape).
Tensor where(const std::vector<bool>& mask, const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row sums, R x 1.
Tensor sum_cols(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log; non-positive inputs raise NonFinite.
Tensor log(const Tensor& x);
/// Square root with the derivative clamped near zero.
Tensor sqrt(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor atan2(const Tensor& y, const Tensor& x);

/// Row-wise softmax.
Tensor softmax(const Tensor& x);
/// x + row (row is 1 x C), added to every row.
Tensor add_row(const Tensor& x, const Tensor& row);
/// x * scale + shift, with scale and shift 1 x C rows.
Tensor scale_shift(const Tensor& x, const Tensor& scale, const Tensor& shift);
/// Row-normalize (zero mean, unit variance) then scale_shift.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-5);

/// Row-wise minimum, R x 1. Ties resolve to the lowest column; the gradient
/// flows to that column only.
Tensor min_reduce(const Tensor& x);
/// Row-wise squared L2 norm, R x 1.
Tensor square_norm(const Tensor& x);
/// Row-wise minimum over the implicit pairwise Euclidean distance matrix
/// between the rows of a (n x 3) and b (m x 3): out(i) = min_j |a_i - b_j|.
/// Equivalent to min_reduce of the distance matrix without materializing it.
Tensor nearest_distance(const Tensor& a, const Tensor& b);

// ---- verification ---------------------------------------------------------

using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |central|).
double grad_check(const ScalarFn& f, const Matrix& x, double eps = 1e-5);

/// Same check over (a subset of) the coordinates of every parameter in the
/// store. `max_coords_per_param` <= 0 checks all coordinates.
double grad_check_params(const std::function<Tensor(Graph&)>& f, ParamStore& store, double eps,
                         int max_coords_per_param = 0);

}  // namespace paco::diff
