#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/gradcheck.hpp"
#include "ctxnmt/params.hpp"

using namespace ctxnmt;
using Td = Tensor<double>;

namespace {

Td mat(std::size_t r, std::size_t c, std::vector<double> v) { return Td::matrix(r, c, std::move(v)); }

Td random_tensor(Shape s, std::mt19937_64& g, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Td t(std::move(s));
  for (auto& v : t.values()) v = d(g);
  return t;
}

}  // namespace

TEST(Matmul, IdentityAndHandCase) {
  Tape<double> t(false);
  auto r = matmul(t.constant(Td::identity(2)), t.constant(mat(2, 2, {1, 2, 3, 4})));
  EXPECT_EQ(r.value(), mat(2, 2, {1, 2, 3, 4}));
  auto s = matmul(t.constant(mat(1, 2, {1, 2})), t.constant(mat(2, 1, {3, 4})));
  EXPECT_DOUBLE_EQ(s.value()[0], 1 * 3 + 2 * 4);
}

TEST(Matmul, ZeroAnnihilates) {
  std::mt19937_64 g(3);
  Tape<double> t(false);
  auto r = matmul(t.constant(Td::matrix(2, 3)), t.constant(random_tensor({3, 5}, g)));
  EXPECT_EQ(r.value(), Td::matrix(2, 5));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> t(false);
  try {
    matmul(t.constant(Td::matrix(2, 3)), t.constant(Td::matrix(2, 3)));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, Associativity) {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> t(false);
    auto a = t.constant(random_tensor({4, 5}, g));
    auto b = t.constant(random_tensor({5, 3}, g));
    auto c = t.constant(random_tensor({3, 6}, g));
    const auto& l = matmul(matmul(a, b), c).value();
    const auto& r = matmul(a, matmul(b, c)).value();
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_LE(relative_error(l[i], r[i], 1e-12), 1e-10);
  }
}

TEST(Elementwise, Values) {
  Tape<double> t(false);
  EXPECT_EQ(tanh(t.constant(Td::vector({0, 0}))).value(), Td::vector({0, 0}));
  EXPECT_DOUBLE_EQ(sigmoid(t.constant(Td::vector({0}))).value()[0], 0.5);
  const double x = 0.5;
  const double oracle = (std::exp(x) - std::exp(-x)) / (std::exp(x) + std::exp(-x));
  EXPECT_NEAR(tanh(t.constant(Td::vector({x}))).value()[0], oracle, 1e-15);
  EXPECT_NEAR(oracle, 0.462117, 1e-6);
  auto s = scale(t.constant(Td::vector({1, -2})), 3.0);
  EXPECT_EQ(s.value(), Td::vector({3, -6}));
  auto d = sub(t.constant(Td::vector({1, 2})), t.constant(Td::vector({3, 5})));
  EXPECT_EQ(d.value(), Td::vector({-2, -3}));
}

TEST(Elementwise, ScalarBroadcastOnly) {
  Tape<double> t(false);
  auto r = mul(t.constant(Td::scalar(2)), t.constant(Td::vector({1, 2, 3})));
  EXPECT_EQ(r.value(), Td::vector({2, 4, 6}));
  EXPECT_THROW(add(t.constant(Td::vector({1, 2})), t.constant(Td::vector({1, 2, 3}))), DimensionError);
  EXPECT_THROW(add(t.constant(Td::matrix(2, 3)), t.constant(Td::matrix(3, 2))), DimensionError);
}

TEST(Softmax, Examples) {
  Tape<double> t(false);
  auto a = softmax_rows(t.constant(mat(1, 2, {0, 0})));
  EXPECT_DOUBLE_EQ(a.value()[0], 0.5);
  auto b = softmax_rows(t.constant(mat(1, 3, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.value()[i], std::exp(i + 1.0) / z, 1e-15);
  EXPECT_NEAR(b.value()[0], 0.09003, 1e-5);
  EXPECT_NEAR(b.value()[2], 0.66524, 1e-5);
  EXPECT_DOUBLE_EQ(softmax_rows(t.constant(mat(1, 1, {5}))).value()[0], 1.0);
}

TEST(Softmax, MaskAndEmptySupport) {
  Tape<double> t(false);
  std::vector<std::uint8_t> m{1, 0, 1};
  auto a = softmax_rows(t.constant(mat(1, 3, {1, 100, 1})), std::span<const std::uint8_t>(m));
  EXPECT_EQ(a.value()[1], 0.0);
  EXPECT_DOUBLE_EQ(a.value()[0], 0.5);
  std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(softmax_rows(t.constant(mat(1, 3, {1, 2, 3})), std::span<const std::uint8_t>(none)), ContractError);
}

TEST(Softmax, MaxSubtractionAvoidsOverflow) {
  Tape<float> t(false);
  auto a = softmax_rows(t.constant(Tensor<float>::matrix(1, 2, {1000.f, 1000.f})));
  EXPECT_FLOAT_EQ(a.value()[0], 0.5f);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 9;
    auto x = random_tensor({1, n}, g, -10, 10);
    std::vector<std::uint8_t> m(n, 1);
    for (std::size_t i = 0; i + 1 < n; ++i) m[i] = g() & 1;
    Tape<double> t(false);
    const auto& p = softmax_rows(t.constant(x), std::span<const std::uint8_t>(m)).value();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += p[i];
      EXPECT_GE(p[i], 0.0);
      if (!m[i]) {
        EXPECT_EQ(p[i], 0.0);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
    // Integer shifts keep x - max exact, so the result is bit-identical.
    Td y = x;
    const double c = std::round(shift(g));
    for (std::size_t i = 0; i < n; ++i)
      if (m[i]) y[i] += c;
    const auto& q = softmax_rows(t.constant(y), std::span<const std::uint8_t>(m)).value();
    auto xr = x;
    for (std::size_t i = 0; i < n; ++i) xr[i] = std::round(x[i] * 8) / 8;
    auto yr = xr;
    for (std::size_t i = 0; i < n; ++i)
      if (m[i]) yr[i] += c;
    EXPECT_EQ(softmax_rows(t.constant(xr), std::span<const std::uint8_t>(m)).value(),
              softmax_rows(t.constant(yr), std::span<const std::uint8_t>(m)).value());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Backward, Examples) {
  {
    Tape<double> t;
    auto x = t.leaf(Td::vector({1, 2, 3}));
    t.backward(sum(x));
    EXPECT_EQ(x.grad(), Td::vector({1, 1, 1}));
  }
  {
    Tape<double> t;
    auto x = t.leaf(Td::vector({0.5}));
    t.backward(sum(tanh(x)));
    const double th = std::tanh(0.5);
    EXPECT_NEAR(x.grad()[0], 1 - th * th, 1e-15);
    EXPECT_NEAR(x.grad()[0], 0.786448, 1e-6);
  }
  {
    Tape<double> t;
    auto x = t.leaf(Td::vector({2}));
    auto y = t.leaf(Td::vector({3}));
    t.backward(sum(mul(x, y)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 3);
    EXPECT_DOUBLE_EQ(y.grad()[0], 2);
  }
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tape<double> t;
  auto x = t.leaf(Td::vector({1, 2}));
  auto loss = sum(mul(x, x));
  t.backward(loss);
  t.backward(loss);
  EXPECT_EQ(x.grad(), Td::vector({4, 8}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape<double> t;
  auto x = t.leaf(Td::vector({1, 2}));
  EXPECT_THROW(t.backward(tanh(x)), ContractError);
  Tape<double> inference(false);
  auto y = inference.leaf(Td::vector({1}));
  EXPECT_THROW(inference.backward(sum(y)), ContractError);
}

TEST(Backward, VisitsEveryRecordedNodeOnce) {
  Tape<double> t;
  auto x = t.leaf(Td::vector({0.3, -0.2}));
  auto a = tanh(x);
  auto b = sigmoid(x);
  auto loss = sum(add(mul(a, b), a));
  t.backward(loss);
  EXPECT_EQ(t.last_backward_visits(), t.size());
}

TEST(Backward, GatherOutOfRange) {
  Tape<double> t;
  auto e = t.leaf(Td::matrix(3, 2));
  std::vector<int> ids{0, 3};
  EXPECT_THROW(gather_rows(e, std::span<const int>(ids)), ContractError);
}

// Finite-difference checks for each primitive, with every operand a parameter.
class PrimitiveGrad : public ::testing::Test {
 protected:
  std::mt19937_64 g{17};
  ParameterStore<double> ps;
  Parameter<double>& p(const std::string& n, Shape s) { return ps.add(n, random_tensor(std::move(s), g)); }
  void expect_ok(const std::function<Var<double>(Tape<double>&)>& f) {
    auto r = check_gradients(ps, f);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
    EXPECT_GT(r.checked, 0u);
  }
  // Contracts every output with a fixed random weight so all entries matter.
  Var<double> probe(Tape<double>& t, Var<double> y) {
    std::mt19937_64 h(99);
    auto w = random_tensor(y.shape(), h);
    return sum(mul(y, t.constant(std::move(w))));
  }
};

TEST_F(PrimitiveGrad, Matmul) {
  auto& a = p("a", {3, 4});
  auto& b = p("b", {4, 2});
  expect_ok([&](Tape<double>& t) { return probe(t, matmul(t.param(a), t.param(b))); });
}

TEST_F(PrimitiveGrad, MatmulBt) {
  auto& a = p("a", {3, 4});
  auto& b = p("b", {5, 4});
  expect_ok([&](Tape<double>& t) { return probe(t, matmul_bt(t.param(a), t.param(b))); });
}

TEST_F(PrimitiveGrad, Elementwise) {
  auto& a = p("a", {2, 3});
  auto& b = p("b", {2, 3});
  auto& s = p("s", {1});
  expect_ok([&](Tape<double>& t) {
    auto x = t.param(a), y = t.param(b);
    auto r = add(mul(tanh(x), sigmoid(y)), sub(scale(x, 0.7), one_minus(y)));
    return probe(t, mul(t.param(s), r));
  });
}

TEST_F(PrimitiveGrad, RowOps) {
  auto& x = p("x", {3, 4});
  auto& y = p("y", {3, 2});
  auto& b = p("b", {4});
  auto& v = p("v", {6});
  std::vector<double> m{1, 0, 1};
  expect_ok([&](Tape<double>& t) {
    auto xb = add_row(t.param(x), t.param(b));
    auto c = concat_cols({xb, t.param(y)});
    auto sl = slice_cols(c, 1, 4);
    auto bl = row_blend(sl, tanh(sl), std::span<const double>(m));
    return add(probe(t, bl), sum(rowdot(c, t.param(v))));
  });
}

TEST_F(PrimitiveGrad, GatherLayerNorm) {
  auto& e = p("emb", {5, 4});
  auto& gn = p("g", {4});
  auto& bn = p("b", {4});
  std::vector<int> ids{1, 4, 1};
  expect_ok([&](Tape<double>& t) {
    auto x = gather_rows(t.param(e), std::span<const int>(ids));
    return probe(t, layer_norm(x, t.param(gn), t.param(bn)));
  });
}

TEST_F(PrimitiveGrad, SoftmaxFamily) {
  auto& x = p("x", {2, 4});
  std::vector<std::uint8_t> m{1, 1, 0, 1, 0, 1, 1, 1};
  std::vector<int> tg{2, 0};
  std::vector<double> w{1, 0.5};
  expect_ok([&](Tape<double>& t) {
    auto s = softmax_rows(t.param(x), std::span<const std::uint8_t>(m));
    auto l = log_softmax_rows(t.param(x));
    return add(probe(t, s), pick_sum(l, std::span<const int>(tg), std::span<const double>(w)));
  });
}

TEST_F(PrimitiveGrad, WeightedSum) {
  auto& w = p("w", {2, 3});
  auto& s0 = p("s0", {2, 4});
  auto& s1 = p("s1", {2, 4});
  auto& s2 = p("s2", {2, 4});
  expect_ok([&](Tape<double>& t) {
    std::vector<Var<double>> st{t.param(s0), t.param(s1), t.param(s2)};
    return probe(t, weighted_sum(t.param(w), std::span<const Var<double>>(st)));
  });
}
