#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "paco/diff.hpp"

namespace paco::diff {
namespace {

Matrix random_matrix(Index r, Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Tensor weighted_sum(Graph& g, const Tensor& y) {
  const Matrix w = random_matrix(y.rows(), y.cols(), 999, 0.5, 1.5);
  return sum(mul(y, g.constant(w)));
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(DiffOps, TrivialExamples) {
  Graph g;
  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 3, 4;
  const Matrix s = add(g.constant(a), g.constant(b)).value();
  EXPECT_EQ(s(0, 0), 4);
  EXPECT_EQ(s(0, 1), 6);
  EXPECT_DOUBLE_EQ(sigmoid(g.constant(0.0)).item(), 0.5);

  Matrix v(4, 1);
  v << 1, 2, 3, 4;
  const int groups[] = {0, 0, 1, 1};
  const Matrix p = group_sum(g.constant(v), groups, 2).value();
  EXPECT_EQ(p(0, 0), 3);
  EXPECT_EQ(p(1, 0), 7);
}

TEST(DiffOps, ShapeAndFiniteErrors) {
  Graph g;
  const Tensor a = g.constant(Matrix::Ones(2, 3));
  const Tensor b = g.constant(Matrix::Ones(3, 2));
  try {
    add(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
  EXPECT_THROW(matmul(a, a), Error);
  try {
    div(g.constant(1.0), g.constant(0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_THROW(log(g.constant(0.0)), Error);
}

TEST(DiffBackward, SquareAndSigmoid) {
  {
    Graph g;
    const Tensor x = g.variable(Matrix::Constant(1, 1, 3.0));
    g.backward(mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
  }
  {
    Graph g;
    const Tensor x = g.variable(Matrix::Zero(2, 3));
    g.backward(sum(sigmoid(x)));
    EXPECT_TRUE(x.grad().isApproxToConstant(0.25, 1e-15));
  }
}

TEST(DiffBackward, NotScalar) {
  Graph g;
  const Tensor x = g.variable(Matrix::Ones(2, 2));
  try {
    g.backward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotScalar);
  }
}

TEST(DiffBackward, GradientsAccumulateAcrossCalls) {
  Graph g;
  const Tensor x = g.variable(Matrix::Constant(1, 1, 2.0));
  const Tensor loss = scale(x, 3.0);
  g.backward(loss);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(GradCheck, ProductRule) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix y = random_matrix(3, 4, seed + 100);
    const double err = grad_check(
        [&](Graph& g, const Tensor& x) { return sum(mul(x, g.constant(y))); },
        random_matrix(3, 4, seed), 1e-5);
    EXPECT_LT(err, 1e-7);
  }
}

TEST(GradCheck, ConstantFunction) {
  const Matrix x0 = random_matrix(2, 2, 7);
  EXPECT_EQ(grad_check([](Graph& g, const Tensor&) { return g.constant(4.2); }, x0), 0.0);
  Graph g;
  const Tensor x = g.variable(x0);
  g.backward(add(sum(scale(x, 0.0)), g.constant(1.0)));
  EXPECT_TRUE(x.grad().isZero(0.0));
}

struct OpCase {
  const char* name;
  ScalarFn f;
  Matrix x;
};

std::vector<OpCase> op_cases() {
  const Matrix other = random_matrix(3, 4, 11);
  const Matrix positive = random_matrix(3, 4, 12, 0.5, 2.0);
  const Matrix right = random_matrix(4, 2, 13);
  const Matrix row = random_matrix(1, 4, 14, 0.5, 1.5);
  const Matrix shift = random_matrix(1, 4, 15);
  const Matrix cloud = random_matrix(12, 3, 16);
  std::vector<OpCase> c;
  const Matrix x = random_matrix(3, 4, 1);
  c.push_back({"add", [=](Graph& g, const Tensor& t) { return weighted_sum(g, add(t, g.constant(other))); }, x});
  c.push_back({"add_scalar_broadcast",
               [=](Graph& g, const Tensor& t) { return weighted_sum(g, add(g.constant(other), sum(t))); }, x});
  c.push_back({"sub", [=](Graph& g, const Tensor& t) { return weighted_sum(g, sub(g.constant(other), t)); }, x});
  c.push_back({"mul", [=](Graph& g, const Tensor& t) { return weighted_sum(g, mul(t, t)); }, x});
  c.push_back({"div_num", [=](Graph& g, const Tensor& t) { return weighted_sum(g, div(t, g.constant(positive))); }, x});
  c.push_back({"div_den", [=](Graph& g, const Tensor& t) { return weighted_sum(g, div(g.constant(other), t)); },
               positive});
  c.push_back({"matmul_left", [=](Graph& g, const Tensor& t) { return weighted_sum(g, matmul(t, g.constant(right))); }, x});
  c.push_back({"matmul_right",
               [=](Graph& g, const Tensor& t) { return weighted_sum(g, matmul(g.constant(other), t)); },
               random_matrix(4, 2, 2)});
  c.push_back({"transpose", [=](Graph& g, const Tensor& t) { return weighted_sum(g, transpose(t)); }, x});
  c.push_back({"reshape", [=](Graph& g, const Tensor& t) { return weighted_sum(g, reshape(t, 2, 6)); }, x});
  c.push_back({"concat_rows",
               [=](Graph& g, const Tensor& t) {
                 const Tensor parts[] = {t, g.constant(other), mul(t, t)};
                 return weighted_sum(g, concat(parts, 0));
               },
               x});
  c.push_back({"concat_cols",
               [=](Graph& g, const Tensor& t) {
                 const Tensor parts[] = {g.constant(other), t};
                 return weighted_sum(g, concat(parts, 1));
               },
               x});
  c.push_back({"slice", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, slice_rows(slice_cols(t, 1, 2), 1, 2));
               }, x});
  c.push_back({"gather", [=](Graph& g, const Tensor& t) {
                 const int idx[] = {2, 0, 2, 1};
                 return weighted_sum(g, gather_rows(t, idx));
               }, x});
  c.push_back({"group_sum", [=](Graph& g, const Tensor& t) {
                 const int grp[] = {1, -1, 1};
                 return weighted_sum(g, group_sum(t, grp, 3));
               }, x});
  c.push_back({"group_max", [=](Graph& g, const Tensor& t) {
                 const int grp[] = {0, 0, 1};
                 return weighted_sum(g, group_max(t, grp, 2));
               }, x});
  c.push_back({"where", [=](Graph& g, const Tensor& t) {
                 std::vector<bool> mask(12);
                 for (int k = 0; k < 12; ++k) mask[k] = k % 3 == 0;
                 return weighted_sum(g, where(mask, t, mul(t, t)));
               }, x});
  c.push_back({"mean", [=](Graph& g, const Tensor& t) { return mean(mul(t, t)); }, x});
  c.push_back({"sum_cols", [=](Graph& g, const Tensor& t) { return weighted_sum(g, sum_cols(mul(t, t))); }, x});
  c.push_back({"relu", [=](Graph& g, const Tensor& t) { return weighted_sum(g, relu(t)); }, x});
  c.push_back({"sigmoid", [=](Graph& g, const Tensor& t) { return weighted_sum(g, sigmoid(t)); }, x});
  c.push_back({"tanh", [=](Graph& g, const Tensor& t) { return weighted_sum(g, tanh(t)); }, x});
  c.push_back({"softplus", [=](Graph& g, const Tensor& t) { return weighted_sum(g, softplus(t)); }, x});
  c.push_back({"exp", [=](Graph& g, const Tensor& t) { return weighted_sum(g, exp(t)); }, x});
  c.push_back({"log", [=](Graph& g, const Tensor& t) { return weighted_sum(g, log(t)); }, positive});
  c.push_back({"sqrt", [=](Graph& g, const Tensor& t) { return weighted_sum(g, sqrt(t)); }, positive});
  c.push_back({"sin", [=](Graph& g, const Tensor& t) { return weighted_sum(g, sin(t)); }, x});
  c.push_back({"cos", [=](Graph& g, const Tensor& t) { return weighted_sum(g, cos(t)); }, x});
  c.push_back({"atan2_y", [=](Graph& g, const Tensor& t) { return weighted_sum(g, atan2(t, g.constant(other))); }, x});
  c.push_back({"atan2_x", [=](Graph& g, const Tensor& t) { return weighted_sum(g, atan2(g.constant(other), t)); }, x});
  c.push_back({"softmax", [=](Graph& g, const Tensor& t) { return weighted_sum(g, softmax(t)); }, x});
  c.push_back({"add_row", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, add_row(g.constant(other), slice_rows(t, 0, 1)));
               }, x});
  c.push_back({"scale_shift", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, scale_shift(t, slice_rows(t, 1, 1), g.constant(shift)));
               }, x});
  c.push_back({"layer_norm", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, layer_norm(t, g.constant(row), slice_rows(t, 2, 1)));
               }, x});
  c.push_back({"min_reduce", [=](Graph& g, const Tensor& t) { return weighted_sum(g, min_reduce(t)); }, x});
  c.push_back({"square_norm", [=](Graph& g, const Tensor& t) { return weighted_sum(g, square_norm(t)); }, x});
  c.push_back({"nearest_distance_a", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, nearest_distance(t, g.constant(cloud)));
               }, random_matrix(10, 3, 17)});
  c.push_back({"nearest_distance_b", [=](Graph& g, const Tensor& t) {
                 return weighted_sum(g, nearest_distance(g.constant(cloud), t));
               }, random_matrix(10, 3, 18)});
  return c;
}

TEST(GradCheck, EveryOpBelowTolerance) {
  for (const auto& oc : op_cases()) {
    EXPECT_LT(grad_check(oc.f, oc.x, 1e-6), 1e-4) << oc.name;
  }
}

TEST(GradCheck, ThreeLayerComposite) {
  ParamStore store;
  store.add("w1", random_matrix(3, 8, 21));
  store.add("b1", random_matrix(1, 8, 22));
  store.add("w2", random_matrix(8, 8, 23));
  store.add("g2", random_matrix(1, 8, 24, 0.5, 1.5));
  store.add("s2", random_matrix(1, 8, 25));
  store.add("w3", random_matrix(8, 1, 26));
  const Matrix input = random_matrix(6, 3, 27);
  auto f = [&](Graph& g) {
    Tensor h = tanh(add_row(matmul(g.constant(input), g.parameter(store, "w1")), g.parameter(store, "b1")));
    h = layer_norm(softplus(matmul(h, g.parameter(store, "w2"))), g.parameter(store, "g2"),
                   g.parameter(store, "s2"));
    return mean(sigmoid(matmul(h, g.parameter(store, "w3"))));
  };
  EXPECT_LT(grad_check_params(f, store, 1e-6), 1e-4);
}

Tensor chamfer(Graph& g, const Tensor& a, const Tensor& b) {
  return scale(add(mean(nearest_distance(a, b)), mean(nearest_distance(b, a))), 0.5);
  (void)g;
}

TEST(GradCheck, ChamferOnRandomSets) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix target = random_matrix(10, 3, seed + 50);
    const double err = grad_check([&](Graph& g, const Tensor& x) { return chamfer(g, x, g.constant(target)); },
                                  random_matrix(10, 3, seed + 60), 1e-6);
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(DiffBackward, MinReduceTiesGoToLowestIndex) {
  Graph g;
  Matrix v(1, 3);
  v << 2.0, 1.0, 1.0;
  const Tensor x = g.variable(v);
  g.backward(sum(min_reduce(x)));
  EXPECT_EQ(x.grad()(0, 1), 1.0);
  EXPECT_EQ(x.grad()(0, 2), 0.0);
}

TEST(DiffBackward, Deterministic) {
  auto run = [] {
    Graph g;
    const Tensor x = g.variable(random_matrix(16, 3, 5));
    const Tensor y = g.constant(random_matrix(20, 3, 6));
    const Tensor h = softmax(matmul(x, transpose(y)));
    g.backward(add(sum(square_norm(h)), mean(nearest_distance(x, y))));
    return x.grad();
  };
  const Matrix a = run();
  const Matrix b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(ParamStore, RoundTripIsBitExact) {
  ParamStore s;
  s.add("enc.w", random_matrix(3, 5, 1, -1e3, 1e3));
  s.add("enc.b", random_matrix(1, 5, 2));
  s.add("empty", Matrix(0, 4));
  const std::string path = temp_path("paco_diff_roundtrip.bin");
  s.save(path, R"({"epoch": 3})");

  ParamStore t;
  t.add("enc.w", Matrix::Zero(3, 5));
  t.add("enc.b", Matrix::Zero(1, 5));
  t.add("empty", Matrix(0, 4));
  const std::string meta = t.load(path);
  EXPECT_NE(meta.find("\"epoch\":3"), std::string::npos);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(std::memcmp(s.value(i).data(), t.value(i).data(), sizeof(double) * s.value(i).size()), 0);
  }
  const ParamStore r = ParamStore::read(path);
  EXPECT_EQ(r.names(), s.names());
  EXPECT_EQ(r.parameter_count(), s.parameter_count());
  std::filesystem::remove(path);
}

TEST(ParamStore, ShapeMismatchNamesParameter) {
  ParamStore s;
  s.add("head.w", Matrix::Ones(2, 2));
  const std::string path = temp_path("paco_diff_shape.bin");
  s.save(path);
  ParamStore t;
  t.add("head.w", Matrix::Ones(3, 2));
  try {
    t.load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    EXPECT_NE(std::string(e.what()).find("head.w"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(ParamStore, CorruptFilesRaiseFormatError) {
  const std::string path = temp_path("paco_diff_corrupt.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "garbage";
  }
  ParamStore t;
  t.add("w", Matrix::Ones(1, 1));
  EXPECT_THROW(t.load(path), Error);
  {
    ParamStore s;
    s.add("w", Matrix::Ones(4, 4));
    s.save(path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  }
  ParamStore u;
  u.add("w", Matrix::Ones(4, 4));
  try {
    u.load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
  }
  std::filesystem::remove(path);
}

TEST(ParamStore, DuplicateNameRejected) {
  ParamStore s;
  s.add("a", Matrix::Ones(1, 1));
  EXPECT_THROW(s.add("a", Matrix::Ones(1, 1)), Error);
}

}  // namespace
}  // namespace paco::diff
