#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "popdiff/gradcheck.hpp"
#include "popdiff/ops.hpp"

namespace popdiff {
namespace {

using V = Var<double>;

NdArray<double> random_array(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  NdArray<double> a(std::move(shape));
  for (auto& v : a.data()) v = n(rng);
  return a;
}

/// Wraps a unary primitive into a scalar by a fixed random projection, so the
/// upstream gradient is not uniform.
template <typename Op>
ScalarFunction project(Op op, Shape out_shape, std::uint64_t seed) {
  auto weights = random_array(std::move(out_shape), seed);
  return [op, weights](Tape<double>& t, std::span<const V> in) {
    V y = op(t, in);
    return ops::reduce_mean(ops::mul(y, t.constant(weights)));
  };
}

void expect_passes(const GradcheckReport& r) {
  for (const auto& e : r.entries) {
    EXPECT_TRUE(e.passed) << e.name << " relative error " << e.relative_error;
  }
}

TEST(Conv1d, IdentityKernelSamePadding) {
  Tape<double> t;
  auto x = t.constant(NdArray<double>({1, 3, 1}, {1, 2, 3}));
  auto w = t.constant(NdArray<double>({1, 1, 1}, {1}));
  auto y = ops::conv1d(x, w, ops::Padding::kSame);
  EXPECT_EQ(std::vector<double>(y.value().data().begin(), y.value().data().end()),
            (std::vector<double>{1, 2, 3}));
}

TEST(Conv1d, ValidPaddingCrossCorrelation) {
  Tape<double> t;
  auto x = t.constant(NdArray<double>({1, 3, 1}, {1, 2, 3}));
  auto w = t.constant(NdArray<double>({2, 1, 1}, {1, 1}));
  auto y = ops::conv1d(x, w, ops::Padding::kValid);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(y.value()[0], 3.0);
  EXPECT_EQ(y.value()[1], 5.0);
}

TEST(Conv1d, NoKernelFlip) {
  // [1,2,3] with kernel [1,0] reads the left tap: valid output [1,2]
  Tape<double> t;
  auto x = t.constant(NdArray<double>({1, 3, 1}, {1, 2, 3}));
  auto w = t.constant(NdArray<double>({2, 1, 1}, {1, 0}));
  auto y = ops::conv1d(x, w, ops::Padding::kValid);
  EXPECT_EQ(y.value()[0], 1.0);
  EXPECT_EQ(y.value()[1], 2.0);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  auto x = random_array({4, 5}, 3);
  Tape<double> t;
  auto a = ops::softmax(t.constant(x), -1);
  NdArray<double> shifted = x;
  for (auto& v : shifted.data()) v += 37.5;
  auto b = ops::softmax(t.constant(shifted), -1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-15);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_GE(a.value()[r * 5 + c], 0.0);
      s += a.value()[r * 5 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  // With eps = 1e-5 the output variance is var/(var+eps); inputs with
  // standard deviation 10 keep that within 1e-6 of 1.
  auto x = random_array({6, 32}, 5, 10.0);
  Tape<double> t;
  auto y = ops::layer_norm(t.constant(x), -1);
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 32; ++c) mean += y.value()[r * 32 + c];
    mean /= 32;
    for (std::size_t c = 0; c < 32; ++c) var += std::pow(y.value()[r * 32 + c] - mean, 2);
    var /= 32;
    EXPECT_LE(std::abs(mean), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Primitives, PureAndBitIdentical) {
  auto x = random_array({2, 3, 4}, 11);
  auto w = random_array({3, 4, 4}, 12);
  auto run = [&] {
    Tape<double> t;
    auto y = ops::gelu(ops::layer_norm(ops::conv1d(t.constant(x), t.constant(w)), -1));
    return ops::softmax(y, 1).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumOfSquares) {
  auto x = random_array({3, 4}, 1);
  Tape<double> t;
  auto v = t.leaf(x);
  auto loss = ops::scale(ops::reduce_mean(ops::mul(v, v)), 12.0);
  t.backward(loss);
  auto g = t.grad_of(v);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 2 * x[i], 1e-14);
}

TEST(Backward, UnusedNodeHasZeroGradient) {
  Tape<double> t;
  auto a = t.leaf(random_array({3}, 1));
  auto unused = t.leaf(random_array({3}, 2));
  auto side = ops::mul(unused, unused);
  auto loss = ops::reduce_mean(ops::mul(a, a));
  t.backward(loss);
  const auto g_unused = t.grad_of(unused);
  const auto g_side = t.grad_of(side);
  for (double g : g_unused.data()) EXPECT_EQ(g, 0.0);
  for (double g : g_side.data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> t;
  auto a = t.leaf(random_array({3}, 1));
  EXPECT_THROW(t.backward(ops::mul(a, a)), ShapeError);
}

TEST(Backward, NonFiniteIsAnError) {
  Tape<double> t;
  auto a = t.leaf(NdArray<double>({2}, {1e200, 1.0}));
  EXPECT_THROW(ops::mul(a, a), NumericError);
}

TEST(Errors, ShapeMismatch) {
  Tape<double> t;
  auto a = t.leaf(random_array({2, 3}, 1));
  auto b = t.leaf(random_array({2, 4}, 2));
  EXPECT_THROW(ops::add(a, b), ShapeError);
  EXPECT_THROW(ops::sub(a, b), ShapeError);
  EXPECT_THROW(ops::matmul(a, b), ShapeError);
  EXPECT_THROW(ops::reshape(a, {5}), ShapeError);
  EXPECT_THROW(ops::transpose(a, {0, 0}), ShapeError);
}

// Central-difference checks of every primitive, double precision.
constexpr double kH = 1e-5;
constexpr double kTol = 1e-4;

TEST(Gradcheck, AddWithBroadcast) {
  auto f = project([](Tape<double>&, std::span<const V> in) { return ops::add(in[0], in[1]); },
                   {2, 3, 4}, 99);
  expect_passes(gradcheck(f, {random_array({2, 3, 4}, 1), random_array({1, 3, 1}, 2)}, kH, kTol));
}

TEST(Gradcheck, SubAndScale) {
  auto f = project([](Tape<double>&, std::span<const V> in) {
    return ops::scale(ops::sub(in[0], in[1]), 0.7);
  }, {3, 4}, 98);
  expect_passes(gradcheck(f, {random_array({3, 4}, 1), random_array({3, 4}, 2)}, kH, kTol));
}

TEST(Gradcheck, MulWithBroadcast) {
  auto f = project([](Tape<double>&, std::span<const V> in) { return ops::mul(in[0], in[1]); },
                   {2, 3, 4}, 97);
  expect_passes(gradcheck(f, {random_array({2, 3, 4}, 1), random_array({1, 1, 4}, 2)}, kH, kTol));
}

TEST(Gradcheck, Matmul) {
  auto f = project([](Tape<double>&, std::span<const V> in) { return ops::matmul(in[0], in[1]); },
                   {2, 3, 5}, 96);
  expect_passes(gradcheck(f, {random_array({2, 3, 4}, 1), random_array({4, 5}, 2)}, kH, kTol));
}

TEST(Gradcheck, BatchedMatmul) {
  auto f = project([](Tape<double>&, std::span<const V> in) { return ops::matmul(in[0], in[1]); },
                   {2, 2, 3, 3}, 95);
  expect_passes(gradcheck(f, {random_array({2, 2, 3, 4}, 1), random_array({2, 2, 4, 3}, 2)}, kH, kTol));
}

TEST(Gradcheck, Conv1dSameAndValid) {
  for (auto pad : {ops::Padding::kSame, ops::Padding::kValid}) {
    const std::size_t lout = pad == ops::Padding::kSame ? 5 : 3;
    auto f = project([pad](Tape<double>&, std::span<const V> in) { return ops::conv1d(in[0], in[1], pad); },
                     {2, lout, 4}, 94);
    expect_passes(gradcheck(f, {random_array({2, 5, 3}, 1), random_array({3, 3, 4}, 2)}, kH, kTol));
  }
  auto even = project([](Tape<double>&, std::span<const V> in) { return ops::conv1d(in[0], in[1]); },
                      {1, 4, 2}, 93);
  expect_passes(gradcheck(even, {random_array({1, 4, 3}, 3), random_array({2, 3, 2}, 4)}, kH, kTol));
}

TEST(Gradcheck, SoftmaxEachAxis) {
  for (int axis : {0, 1, -1}) {
    auto f = project([axis](Tape<double>&, std::span<const V> in) { return ops::softmax(in[0], axis); },
                     {3, 4, 5}, 92);
    expect_passes(gradcheck(f, {random_array({3, 4, 5}, 1)}, kH, kTol));
  }
}

TEST(Gradcheck, LayerNormEachAxis) {
  for (int axis : {1, -1}) {
    auto f = project([axis](Tape<double>&, std::span<const V> in) { return ops::layer_norm(in[0], axis); },
                     {3, 4, 5}, 91);
    expect_passes(gradcheck(f, {random_array({3, 4, 5}, 1)}, kH, kTol));
  }
}

TEST(Gradcheck, Activations) {
  auto x = random_array({4, 6}, 1);
  for (auto& v : x.data()) {
    if (std::abs(v) < 1e-2) v += 0.05;  // keep relu away from its kink
  }
  auto g = project([](Tape<double>&, std::span<const V> in) { return ops::gelu(in[0]); }, {4, 6}, 90);
  auto r = project([](Tape<double>&, std::span<const V> in) { return ops::relu(in[0]); }, {4, 6}, 89);
  expect_passes(gradcheck(g, {x}, kH, kTol));
  expect_passes(gradcheck(r, {x}, kH, kTol));
}

TEST(Gradcheck, TransposeAndReshape) {
  auto f = project([](Tape<double>&, std::span<const V> in) {
    return ops::reshape(ops::transpose(in[0], {2, 0, 1}), {4, 6});
  }, {4, 6}, 88);
  expect_passes(gradcheck(f, {random_array({2, 3, 4}, 1)}, kH, kTol));
}

TEST(Gradcheck, EmbeddingLookupAsMatmul) {
  NdArray<double> onehot({2, 3, 5});
  const std::size_t hot[] = {0, 3, 4, 1, 2, 4};
  for (std::size_t r = 0; r < 6; ++r) onehot[r * 5 + hot[r]] = 1.0;
  auto f = project([onehot](Tape<double>& t, std::span<const V> in) {
    return ops::matmul(t.constant(onehot), in[0]);
  }, {2, 3, 8}, 87);
  expect_passes(gradcheck(f, {random_array({5, 8}, 1)}, kH, kTol));
}

TEST(Gradcheck, QuadraticFormAtTightTolerance) {
  // x^T A x
  auto A = random_array({4, 4}, 7);
  ScalarFunction f = [A](Tape<double>& t, std::span<const V> in) {
    auto x = ops::reshape(in[0], {1, 4});
    auto ax = ops::matmul(x, t.constant(A));
    return ops::scale(ops::reduce_mean(ops::mul(ax, x)), 4.0);
  };
  auto report = gradcheck(f, {random_array({4}, 8)}, kH, 1e-6);
  EXPECT_TRUE(report.passed()) << report.worst();
}

TEST(Gradcheck, FlagsCorruptedAdjoint) {
  // square with an adjoint that is off by a factor of two
  ScalarFunction f = [](Tape<double>& t, std::span<const V> in) {
    NdArray<double> y = in[0].value();
    for (auto& v : y.data()) v = v * v;
    auto sq = t.record(std::move(y), {in[0].id}, [a = in[0].id](Tape<double>& tp, std::size_t self) {
      const auto& g = tp.grad(self);
      const auto& x = tp.value(a);
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 4.0 * x[i] * g[i];
    });
    return ops::reduce_mean(sq);
  };
  auto report = gradcheck(f, {random_array({5}, 1)}, kH, kTol);
  EXPECT_FALSE(report.passed());
  EXPECT_NEAR(report.entries[0].relative_error, 0.5, 1e-6);
}

}  // namespace
}  // namespace popdiff
