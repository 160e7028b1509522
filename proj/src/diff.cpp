#include "paco/diff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "paco/spatial.hpp"

namespace paco::diff {

namespace {

Graph& graph_of(const Tensor& a) {
  if (!a.valid()) throw Error(ErrorCode::ShapeMismatch, "tensor is not attached to a graph");
  return *a.graph();
}

Graph& graph_of(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) throw Error(ErrorCode::ShapeMismatch, "tensors belong to different graphs");
  return g;
}

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + ")";
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

/// Output shape of an elementwise binary op (equal shapes or one 1x1 side).
std::pair<Index, Index> broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  if (is_scalar(a)) return {b.rows(), b.cols()};
  if (is_scalar(b)) return {a.rows(), a.cols()};
  shape_error(op, a, b);
}

Matrix expand(const Matrix& m, Index r, Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  return Matrix::Constant(r, c, m(0, 0));
}

/// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_like(const Matrix& g, const Matrix& like) {
  if (like.rows() == g.rows() && like.cols() == g.cols()) return g;
  return Matrix::Constant(1, 1, g.sum());
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

const Matrix& Tensor::value() const { return graph_of(*this).value(id_); }

Matrix Tensor::grad() const {
  const Graph& g = graph_of(*this);
  if (g.has_grad(id_)) return g.grad(id_);
  return Matrix::Zero(rows(), cols());
}

double Tensor::item() const {
  const Matrix& v = value();
  if (!is_scalar(v)) throw Error(ErrorCode::NotScalar, "item() on " + shape_str(v));
  return v(0, 0);
}

// ---- Graph -----------------------------------------------------------------

Tensor Graph::make(Matrix value, std::span<const Tensor> inputs, BackwardFn backward, const char* op) {
  if (!value.allFinite()) {
    throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite value");
  }
  bool needs = false;
  for (const Tensor& t : inputs) {
    if (t.graph() != this) throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": foreign tensor");
    needs = needs || nodes_[t.id()].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::constant(Matrix value) { return make(std::move(value), {}, nullptr, "constant"); }

Tensor Graph::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Graph::variable(Matrix value) {
  Tensor t = make(std::move(value), {}, nullptr, "variable");
  nodes_[t.id()].requires_grad = true;
  return t;
}

Tensor Graph::parameter(const ParamStore& store, const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Tensor(this, it->second);
  Tensor t = variable(store.get(name));
  param_nodes_.emplace(name, t.id());
  return t;
}

void Graph::backward(const Tensor& loss) {
  if (loss.graph() != this) throw Error(ErrorCode::ShapeMismatch, "loss belongs to another graph");
  if (!is_scalar(nodes_[loss.id()].value)) {
    throw Error(ErrorCode::NotScalar, "backward() needs a 1x1 loss, got " +
                                          shape_str(nodes_[loss.id()].value));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  // Interior gradients are per-sweep scratch; only leaves accumulate.
  for (Node& n : nodes_) {
    if (n.backward) n.grad.resize(0, 0);
  }
  accumulate(loss.id(), Matrix::Constant(1, 1, 1.0));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

void Graph::collect_gradients(const ParamStore& store, GradientBuffer& buffer) const {
  if (buffer.size() != store.size()) buffer = store.zero_gradients();
  for (const auto& [name, id] : param_nodes_) {
    if (has_grad(id)) buffer[store.index_of(name)] += nodes_[id].grad;
  }
}

// ---- ParamStore -------------------------------------------------------------

void ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(name);
  values_.push_back(std::move(init));
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::FormatError, "unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::set(const std::string& name, const Matrix& value) {
  Matrix& dst = values_[index_of(name)];
  if (dst.rows() != value.rows() || dst.cols() != value.cols()) shape_error("ParamStore::set", dst, value);
  dst = value;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

GradientBuffer ParamStore::zero_gradients() const {
  GradientBuffer out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

void ParamStore::save(const std::string& path, const std::string& meta_json) const {
  nlohmann::json header;
  header["format_version"] = 1;
  header["params"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    header["params"].push_back({{"name", names_[i]},
                                {"shape", {values_[i].rows(), values_[i].cols()}},
                                {"offset", offset}});
    offset += static_cast<std::uint64_t>(values_[i].size()) * 8;
  }
  try {
    header["meta"] = nlohmann::json::parse(meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("invalid meta JSON: ") + e.what());
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& v : values_) {
    for (Index k = 0; k < v.size(); ++k) put_u64(os, std::bit_cast<std::uint64_t>(v.data()[k]));
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

namespace {

struct StoreFile {
  nlohmann::json header;
  std::vector<unsigned char> payload;
};

StoreFile read_store_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw Error(ErrorCode::FormatError, "'" + path + "' is too short");
  const std::uint64_t hlen = get_u64(bytes.data());
  if (hlen > bytes.size() - 8) throw Error(ErrorCode::FormatError, "header length exceeds file size");
  StoreFile f;
  try {
    f.header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("corrupt header: ") + e.what());
  }
  if (!f.header.is_object() || !f.header.contains("params") || !f.header["params"].is_array() ||
      f.header.value("format_version", 0) != 1) {
    throw Error(ErrorCode::FormatError, "header lacks format_version 1 / params");
  }
  f.payload.assign(bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen), bytes.end());
  return f;
}

Matrix decode_entry(const nlohmann::json& entry, const std::vector<unsigned char>& payload) {
  try {
    const Index rows = entry.at("shape").at(0).get<Index>();
    const Index cols = entry.at("shape").at(1).get<Index>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (rows < 0 || cols < 0) throw Error(ErrorCode::FormatError, "negative shape");
    const std::uint64_t bytes = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 8;
    if (offset > payload.size() || bytes > payload.size() - offset) {
      throw Error(ErrorCode::FormatError, "parameter '" + entry.value("name", std::string("?")) +
                                              "' extends past end of file");
    }
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) {
      m.data()[k] = std::bit_cast<double>(get_u64(payload.data() + offset + 8 * static_cast<std::uint64_t>(k)));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad parameter entry: ") + e.what());
  }
}

}  // namespace

std::string ParamStore::load(const std::string& path) {
  const StoreFile f = read_store_file(path);
  std::unordered_map<std::string, const nlohmann::json*> entries;
  for (const auto& e : f.header["params"]) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
      throw Error(ErrorCode::FormatError, "parameter entry without a name");
    }
    entries[e["name"].get<std::string>()] = &e;
  }
  std::vector<Matrix> loaded;
  loaded.reserve(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto it = entries.find(names_[i]);
    if (it == entries.end()) throw Error(ErrorCode::FormatError, "missing parameter '" + names_[i] + "'");
    Matrix m = decode_entry(*it->second, f.payload);
    if (m.rows() != values_[i].rows() || m.cols() != values_[i].cols()) {
      throw Error(ErrorCode::FormatError, "parameter '" + names_[i] + "' has shape " + shape_str(m) +
                                              ", expected " + shape_str(values_[i]));
    }
    loaded.push_back(std::move(m));
  }
  values_ = std::move(loaded);
  return f.header.contains("meta") ? f.header["meta"].dump() : "{}";
}

ParamStore ParamStore::read(const std::string& path, std::string* meta_json) {
  const StoreFile f = read_store_file(path);
  ParamStore store;
  for (const auto& e : f.header["params"]) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
      throw Error(ErrorCode::FormatError, "parameter entry without a name");
    }
    store.add(e["name"].get<std::string>(), decode_entry(e, f.payload));
  }
  if (meta_json) *meta_json = f.header.contains("meta") ? f.header["meta"].dump() : "{}";
  return store;
}

// ---- elementwise binary ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const auto [r, c] = broadcast_shape("add", av, bv);
  Matrix out = expand(av, r, c) + expand(bv, r, c);
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    gr.accumulate(ia, reduce_like(gy, gr.value(ia)));
    gr.accumulate(ib, reduce_like(gy, gr.value(ib)));
  }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const auto [r, c] = broadcast_shape("sub", av, bv);
  Matrix out = expand(av, r, c) - expand(bv, r, c);
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    gr.accumulate(ia, reduce_like(gy, gr.value(ia)));
    gr.accumulate(ib, reduce_like(Matrix(-gy), gr.value(ib)));
  }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const auto [r, c] = broadcast_shape("mul", a.value(), b.value());
  Matrix out = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib, r = r, c = c](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    if (gr.requires_grad(ia)) {
      gr.accumulate(ia, reduce_like(Matrix(gy.cwiseProduct(expand(gr.value(ib), r, c))), gr.value(ia)));
    }
    if (gr.requires_grad(ib)) {
      gr.accumulate(ib, reduce_like(Matrix(gy.cwiseProduct(expand(gr.value(ia), r, c))), gr.value(ib)));
    }
  }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const auto [r, c] = broadcast_shape("div", a.value(), b.value());
  Matrix out = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib, r = r, c = c](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    const Matrix bx = expand(gr.value(ib), r, c);
    if (gr.requires_grad(ia)) {
      gr.accumulate(ia, reduce_like(Matrix(gy.cwiseQuotient(bx)), gr.value(ia)));
    }
    if (gr.requires_grad(ib)) {
      const Matrix ax = expand(gr.value(ia), r, c);
      Matrix gb = -(gy.array() * ax.array() / (bx.array() * bx.array())).matrix();
      gr.accumulate(ib, reduce_like(gb, gr.value(ib)));
    }
  }, "div");
}

Tensor scale(const Tensor& x, double s) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value() * s, in, [ix, s](Graph& gr, int self) {
    gr.accumulate(ix, gr.grad(self) * s);
  }, "scale");
}

Tensor add_scalar(const Tensor& x, double s) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make((x.value().array() + s).matrix(), in, [ix](Graph& gr, int self) {
    gr.accumulate(ix, gr.grad(self));
  }, "add_scalar");
}

// ---- linear algebra / shape -----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return g.make(std::move(out), in, [ia, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    if (gr.requires_grad(ia)) gr.accumulate(ia, gy * gr.value(ib).transpose());
    if (gr.requires_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * gy);
  }, "matmul");
}

Tensor transpose(const Tensor& x) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value().transpose(), in, [ix](Graph& gr, int self) {
    gr.accumulate(ix, gr.grad(self).transpose());
  }, "transpose");
}

Tensor reshape(const Tensor& x, Index rows, Index cols) {
  Graph& g = graph_of(x);
  if (rows * cols != x.value().size()) {
    shape_error("reshape", x.value(), Matrix(rows, cols));
  }
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const Tensor in[] = {x};
  const int ix = x.id();
  const Index r0 = x.rows(), c0 = x.cols();
  return g.make(std::move(out), in, [ix, r0, c0](Graph& gr, int self) {
    gr.accumulate(ix, Eigen::Map<const Matrix>(gr.grad(self).data(), r0, c0));
  }, "reshape");
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Graph& g = graph_of(parts[0]);
  Index rows = 0, cols = 0;
  for (const Tensor& t : parts) {
    const Matrix& v = t.value();
    if (axis == 0) {
      if (t.id() != parts[0].id() && v.cols() != parts[0].cols()) shape_error("concat", parts[0].value(), v);
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != parts[0].rows()) shape_error("concat", parts[0].value(), v);
      cols += v.cols();
      rows = v.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Tensor& t : parts) {
    const Matrix& v = t.value();
    if (axis == 0) {
      out.middleRows(off, v.rows()) = v;
      offsets.push_back(off);
      off += v.rows();
    } else {
      out.middleCols(off, v.cols()) = v;
      offsets.push_back(off);
      off += v.cols();
    }
    ids.push_back(t.id());
  }
  return g.make(std::move(out), parts, [ids, offsets, axis](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!gr.requires_grad(ids[k])) continue;
      const Matrix& v = gr.value(ids[k]);
      if (axis == 0) {
        gr.accumulate(ids[k], gy.middleRows(offsets[k], v.rows()));
      } else {
        gr.accumulate(ids[k], gy.middleCols(offsets[k], v.cols()));
      }
    }
  }, "concat");
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  Graph& g = graph_of(x);
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range");
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value().middleCols(start, count), in, [ix, start, count](Graph& gr, int self) {
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), gr.value(ix).cols());
    gx.middleCols(start, count) = gr.grad(self);
    gr.accumulate(ix, gx);
  }, "slice_cols");
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  Graph& g = graph_of(x);
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "slice_rows out of range");
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value().middleRows(start, count), in, [ix, start, count](Graph& gr, int self) {
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), gr.value(ix).cols());
    gx.middleRows(start, count) = gr.grad(self);
    gr.accumulate(ix, gx);
  }, "slice_rows");
}

Tensor gather_rows(const Tensor& x, std::span<const int> indices) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  Matrix out(static_cast<Index>(indices.size()), v.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= v.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "gather_rows index out of range");
    }
    out.row(static_cast<Index>(i)) = v.row(indices[i]);
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  std::vector<int> idx(indices.begin(), indices.end());
  return g.make(std::move(out), in, [ix, idx = std::move(idx)](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), gr.value(ix).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += gy.row(static_cast<Index>(i));
    gr.accumulate(ix, gx);
  }, "gather_rows");
}

Tensor group_sum(const Tensor& x, std::span<const int> groups, Index group_count) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  if (static_cast<Index>(groups.size()) != v.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "group_sum needs one group per row");
  }
  Matrix out = Matrix::Zero(group_count, v.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] >= group_count) throw Error(ErrorCode::ShapeMismatch, "group index out of range");
    if (groups[i] >= 0) out.row(groups[i]) += v.row(static_cast<Index>(i));
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  std::vector<int> grp(groups.begin(), groups.end());
  return g.make(std::move(out), in, [ix, grp = std::move(grp)](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), gr.value(ix).cols());
    for (std::size_t i = 0; i < grp.size(); ++i) {
      if (grp[i] >= 0) gx.row(static_cast<Index>(i)) = gy.row(grp[i]);
    }
    gr.accumulate(ix, gx);
  }, "group_sum");
}

Tensor group_max(const Tensor& x, std::span<const int> groups, Index group_count) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  if (static_cast<Index>(groups.size()) != v.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "group_max needs one group per row");
  }
  // argmax row per (group, column); -1 for empty groups.
  std::vector<int> arg(static_cast<std::size_t>(group_count * v.cols()), -1);
  Matrix out = Matrix::Zero(group_count, v.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int gi = groups[i];
    if (gi < 0) continue;
    if (gi >= group_count) throw Error(ErrorCode::ShapeMismatch, "group index out of range");
    for (Index c = 0; c < v.cols(); ++c) {
      int& a = arg[static_cast<std::size_t>(gi * v.cols() + c)];
      if (a < 0 || v(static_cast<Index>(i), c) > v(a, c)) {
        a = static_cast<int>(i);
        out(gi, c) = v(static_cast<Index>(i), c);
      }
    }
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  const Index cols = v.cols();
  return g.make(std::move(out), in, [ix, arg = std::move(arg), cols, group_count](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), cols);
    for (Index gi = 0; gi < group_count; ++gi) {
      for (Index c = 0; c < cols; ++c) {
        const int a = arg[static_cast<std::size_t>(gi * cols + c)];
        if (a >= 0) gx(a, c) += gy(gi, c);
      }
    }
    gr.accumulate(ix, gx);
  }, "group_max");
}

Tensor where(const std::vector<bool>& mask, const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols() || static_cast<Index>(mask.size()) != av.size()) {
    shape_error("where", av, bv);
  }
  Matrix out = bv;
  for (Index k = 0; k < out.size(); ++k) {
    if (mask[static_cast<std::size_t>(k)]) out.data()[k] = av.data()[k];
  }
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib, mask](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    Matrix ga = Matrix::Zero(gy.rows(), gy.cols());
    Matrix gb = Matrix::Zero(gy.rows(), gy.cols());
    for (Index k = 0; k < gy.size(); ++k) {
      (mask[static_cast<std::size_t>(k)] ? ga : gb).data()[k] = gy.data()[k];
    }
    gr.accumulate(ia, ga);
    gr.accumulate(ib, gb);
  }, "where");
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(Matrix::Constant(1, 1, x.value().sum()), in, [ix](Graph& gr, int self) {
    const Matrix& v = gr.value(ix);
    gr.accumulate(ix, Matrix::Constant(v.rows(), v.cols(), gr.grad(self)(0, 0)));
  }, "sum");
}

Tensor mean(const Tensor& x) {
  Graph& g = graph_of(x);
  const Index n = x.value().size();
  if (n == 0) throw Error(ErrorCode::EmptySet, "mean of an empty tensor");
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(Matrix::Constant(1, 1, x.value().mean()), in, [ix, n](Graph& gr, int self) {
    const Matrix& v = gr.value(ix);
    gr.accumulate(ix, Matrix::Constant(v.rows(), v.cols(), gr.grad(self)(0, 0) / static_cast<double>(n)));
  }, "mean");
}

Tensor sum_cols(const Tensor& x) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value().rowwise().sum(), in, [ix](Graph& gr, int self) {
    const Index cols = gr.value(ix).cols();
    gr.accumulate(ix, gr.grad(self).replicate(1, cols));
  }, "sum_cols");
}

Tensor min_reduce(const Tensor& x) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  if (v.cols() == 0) throw Error(ErrorCode::EmptySet, "min_reduce over zero columns");
  Matrix out(v.rows(), 1);
  std::vector<Index> arg(static_cast<std::size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < v.cols(); ++c) {
      if (v(r, c) < v(r, best)) best = c;
    }
    arg[static_cast<std::size_t>(r)] = best;
    out(r, 0) = v(r, best);
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(std::move(out), in, [ix, arg = std::move(arg)](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    Matrix gx = Matrix::Zero(gr.value(ix).rows(), gr.value(ix).cols());
    for (std::size_t r = 0; r < arg.size(); ++r) gx(static_cast<Index>(r), arg[r]) = gy(static_cast<Index>(r), 0);
    gr.accumulate(ix, gx);
  }, "min_reduce");
}

Tensor square_norm(const Tensor& x) {
  Graph& g = graph_of(x);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(x.value().rowwise().squaredNorm(), in, [ix](Graph& gr, int self) {
    const Matrix& v = gr.value(ix);
    Matrix gx = 2.0 * v;
    gx.array().colwise() *= gr.grad(self).col(0).array();
    gr.accumulate(ix, gx);
  }, "square_norm");
}

Tensor nearest_distance(const Tensor& a, const Tensor& b) {
  Graph& g = graph_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != 3 || bv.cols() != 3) shape_error("nearest_distance", av, bv);
  if (bv.rows() == 0) throw Error(ErrorCode::EmptySet, "nearest_distance to an empty set");
  PointList bp(static_cast<std::size_t>(bv.rows()));
  for (Index j = 0; j < bv.rows(); ++j) bp[static_cast<std::size_t>(j)] = bv.row(j).transpose();
  const KdTree tree(bp);
  Matrix out(av.rows(), 1);
  std::vector<int> arg(static_cast<std::size_t>(av.rows()));
  for (Index i = 0; i < av.rows(); ++i) {
    const Neighbor nb = tree.nearest(av.row(i).transpose());
    arg[static_cast<std::size_t>(i)] = nb.index;
    out(i, 0) = std::sqrt(nb.squared_distance);
  }
  const Tensor in[] = {a, b};
  const int ia = a.id(), ib = b.id();
  return g.make(std::move(out), in, [ia, ib, arg = std::move(arg)](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    const Matrix& av2 = gr.value(ia);
    const Matrix& bv2 = gr.value(ib);
    Matrix ga = Matrix::Zero(av2.rows(), 3);
    Matrix gb = Matrix::Zero(bv2.rows(), 3);
    for (Index i = 0; i < av2.rows(); ++i) {
      const int j = arg[static_cast<std::size_t>(i)];
      const Eigen::RowVector3d diff = av2.row(i) - bv2.row(j);
      const double d = diff.norm();
      if (d <= 0.0) continue;  // coincident: zero subgradient
      const Eigen::RowVector3d dir = diff * (gy(i, 0) / d);
      ga.row(i) += dir;
      gb.row(j) -= dir;
    }
    gr.accumulate(ia, ga);
    gr.accumulate(ib, gb);
  }, "nearest_distance");
}

// ---- elementwise unary -----------------------------------------------------

namespace {

/// Unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  Matrix out(v.rows(), v.cols());
  for (Index k = 0; k < v.size(); ++k) out.data()[k] = fwd(v.data()[k]);
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(std::move(out), in, [ix, deriv](Graph& gr, int self) {
    const Matrix& xv = gr.value(ix);
    const Matrix& yv = gr.value(self);
    const Matrix& gy = gr.grad(self);
    Matrix gx(xv.rows(), xv.cols());
    for (Index k = 0; k < xv.size(); ++k) gx.data()[k] = gy.data()[k] * deriv(xv.data()[k], yv.data()[k]);
    gr.accumulate(ix, gx);
  }, op);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus",
               [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
               [](double v, double) { return stable_sigmoid(v); });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any()) {
    throw Error(ErrorCode::NonFinite, "log of a non-positive value");
  }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  if ((x.value().array() < 0.0).any()) {
    throw Error(ErrorCode::NonFinite, "sqrt of a negative value");
  }
  return unary(x, "sqrt", [](double v) { return std::sqrt(v); },
               [](double, double y) { return y > 1e-12 ? 0.5 / y : 0.0; });
}

Tensor sin(const Tensor& x) {
  return unary(x, "sin", [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary(x, "cos", [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  Graph& g = graph_of(y, x);
  const Matrix& yv = y.value();
  const Matrix& xv = x.value();
  if (yv.rows() != xv.rows() || yv.cols() != xv.cols()) shape_error("atan2", yv, xv);
  Matrix out(yv.rows(), yv.cols());
  for (Index k = 0; k < out.size(); ++k) out.data()[k] = std::atan2(yv.data()[k], xv.data()[k]);
  const Tensor in[] = {y, x};
  const int iy = y.id(), ix = x.id();
  return g.make(std::move(out), in, [iy, ix](Graph& gr, int self) {
    const Matrix& yv2 = gr.value(iy);
    const Matrix& xv2 = gr.value(ix);
    const Matrix& gz = gr.grad(self);
    Matrix gy(yv2.rows(), yv2.cols()), gx(xv2.rows(), xv2.cols());
    for (Index k = 0; k < gz.size(); ++k) {
      const double a = xv2.data()[k], b = yv2.data()[k];
      const double r2 = a * a + b * b;
      gy.data()[k] = r2 > 0 ? gz.data()[k] * a / r2 : 0.0;
      gx.data()[k] = r2 > 0 ? -gz.data()[k] * b / r2 : 0.0;
    }
    gr.accumulate(iy, gy);
    gr.accumulate(ix, gx);
  }, "atan2");
}

// ---- row-structured ops ----------------------------------------------------

Tensor softmax(const Tensor& x) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  Matrix out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    out.row(r) = (v.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  return g.make(std::move(out), in, [ix](Graph& gr, int self) {
    const Matrix& s = gr.value(self);
    const Matrix& gy = gr.grad(self);
    const Eigen::VectorXd dot = gy.cwiseProduct(s).rowwise().sum();
    Matrix gx = s.cwiseProduct(Matrix(gy.colwise() - dot));
    gr.accumulate(ix, gx);
  }, "softmax");
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  Graph& g = graph_of(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("add_row", x.value(), row.value());
  Matrix out = x.value().rowwise() + row.value().row(0);
  const Tensor in[] = {x, row};
  const int ix = x.id(), ir = row.id();
  return g.make(std::move(out), in, [ix, ir](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    gr.accumulate(ix, gy);
    gr.accumulate(ir, gy.colwise().sum());
  }, "add_row");
}

Tensor scale_shift(const Tensor& x, const Tensor& scale_row, const Tensor& shift_row) {
  Graph& g = graph_of(x, scale_row);
  graph_of(x, shift_row);
  if (scale_row.rows() != 1 || scale_row.cols() != x.cols()) shape_error("scale_shift", x.value(), scale_row.value());
  if (shift_row.rows() != 1 || shift_row.cols() != x.cols()) shape_error("scale_shift", x.value(), shift_row.value());
  Matrix out = (x.value().array().rowwise() * scale_row.value().row(0).array()).matrix();
  out.rowwise() += shift_row.value().row(0);
  const Tensor in[] = {x, scale_row, shift_row};
  const int ix = x.id(), is = scale_row.id(), ib = shift_row.id();
  return g.make(std::move(out), in, [ix, is, ib](Graph& gr, int self) {
    const Matrix& gy = gr.grad(self);
    gr.accumulate(ix, (gy.array().rowwise() * gr.value(is).row(0).array()).matrix());
    gr.accumulate(is, gy.cwiseProduct(gr.value(ix)).colwise().sum());
    gr.accumulate(ib, gy.colwise().sum());
  }, "scale_shift");
}

Tensor layer_norm(const Tensor& x, const Tensor& scale_row, const Tensor& shift_row, double eps) {
  Graph& g = graph_of(x);
  const Matrix& v = x.value();
  const Index c = v.cols();
  Matrix xhat(v.rows(), c);
  Eigen::VectorXd inv_std(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu).matrix() * inv_std(r);
  }
  const Tensor in[] = {x};
  const int ix = x.id();
  Tensor normalized = g.make(xhat, in, [ix, inv_std](Graph& gr, int self) {
    const Matrix& xh = gr.value(self);
    const Matrix& gy = gr.grad(self);
    const double n = static_cast<double>(xh.cols());
    Matrix gx(xh.rows(), xh.cols());
    for (Index r = 0; r < xh.rows(); ++r) {
      const double mean_g = gy.row(r).sum() / n;
      const double mean_gx = gy.row(r).dot(xh.row(r)) / n;
      gx.row(r) = ((gy.row(r).array() - mean_g - xh.row(r).array() * mean_gx) * inv_std(r)).matrix();
    }
    gr.accumulate(ix, gx);
  }, "layer_norm");
  return scale_shift(normalized, scale_row, shift_row);
}

// ---- verification ---------------------------------------------------------

double grad_check(const ScalarFn& f, const Matrix& x, double eps) {
  Matrix analytic;
  {
    Graph g;
    const Tensor xv = g.variable(x);
    const Tensor loss = f(g, xv);
    g.backward(loss);
    analytic = xv.grad();
  }
  double worst = 0.0;
  Matrix probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double orig = probe.data()[k];
    probe.data()[k] = orig + eps;
    double fp, fm;
    {
      Graph g;
      fp = f(g, g.constant(probe)).item();
    }
    probe.data()[k] = orig - eps;
    {
      Graph g;
      fm = f(g, g.constant(probe)).item();
    }
    probe.data()[k] = orig;
    const double central = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic.data()[k] - central) / std::max(1.0, std::abs(central)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor(Graph&)>& f, ParamStore& store, double eps,
                         int max_coords_per_param) {
  GradientBuffer analytic;
  {
    Graph g;
    const Tensor loss = f(g);
    g.backward(loss);
    g.collect_gradients(store, analytic);
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Matrix& v = store.value(p);
    const Index n = v.size();
    const Index stride =
        (max_coords_per_param > 0 && n > max_coords_per_param) ? n / max_coords_per_param : 1;
    for (Index k = 0; k < n; k += stride) {
      const double orig = v.data()[k];
      v.data()[k] = orig + eps;
      double fp, fm;
      {
        Graph g;
        fp = f(g).item();
      }
      v.data()[k] = orig - eps;
      {
        Graph g;
        fm = f(g).item();
      }
      v.data()[k] = orig;
      const double central = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[p].data()[k] - central) / std::max(1.0, std::abs(central)));
    }
  }
  return worst;
}

}  // namespace paco::diff
