#include "expnet/ops.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace expnet {
namespace {

using testing::gradient_error;
using testing::random_tensor;

// Direct-loop convolution used as an independent oracle.
Array<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, Index stride,
                         Index pad) {
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2), kh = w.dim(0), kw = w.dim(1), O = w.dim(3);
  const Index Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Array<double> out = Array<double>::Zero(Ho * Wo * O);
  for (Index oy = 0; oy < Ho; ++oy)
    for (Index ox = 0; ox < Wo; ++ox)
      for (Index o = 0; o < O; ++o) {
        double acc = b[o];
        for (Index i = 0; i < kh; ++i)
          for (Index j = 0; j < kw; ++j) {
            const Index y = oy * stride - pad + i, xx = ox * stride - pad + j;
            if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
            for (Index c = 0; c < C; ++c) acc += x[(y * W + xx) * C + c] * w[((i * kw + j) * C + c) * O + o];
          }
        out[(oy * Wo + ox) * O + o] = acc;
      }
  return out;
}

double bilinear(const Tensor<double>& x, double y, double xx, Index c) {
  const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const double y0 = std::floor(y), x0 = std::floor(xx);
  double v = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const Index yy = static_cast<Index>(y0) + dy, xi = static_cast<Index>(x0) + dx;
      if (yy < 0 || yy >= H || xi < 0 || xi >= W) continue;
      const double wy = dy ? y - y0 : 1 - (y - y0), wx = dx ? xx - x0 : 1 - (xx - x0);
      v += wy * wx * x[(yy * W + xi) * C + c];
    }
  return v;
}

Array<double> naive_deformable(const Tensor<double>& x, const Tensor<double>& off, const Tensor<double>& w,
                               const Tensor<double>& b, Index stride, Index pad) {
  const Index C = x.dim(2), kh = w.dim(0), kw = w.dim(1), O = w.dim(3);
  const Index Ho = off.dim(0), Wo = off.dim(1);
  Array<double> out = Array<double>::Zero(Ho * Wo * O);
  for (Index oy = 0; oy < Ho; ++oy)
    for (Index ox = 0; ox < Wo; ++ox)
      for (Index o = 0; o < O; ++o) {
        double acc = b[o];
        for (Index i = 0; i < kh; ++i)
          for (Index j = 0; j < kw; ++j) {
            const Index t = i * kw + j;
            const double dy = off[(oy * Wo + ox) * 2 * kh * kw + 2 * t];
            const double dx = off[(oy * Wo + ox) * 2 * kh * kw + 2 * t + 1];
            const double y = static_cast<double>(oy * stride - pad + i) + dy;
            const double xx = static_cast<double>(ox * stride - pad + j) + dx;
            for (Index c = 0; c < C; ++c) acc += bilinear(x, y, xx, c) * w[((i * kw + j) * C + c) * O + o];
          }
        out[(oy * Wo + ox) * O + o] = acc;
      }
  return out;
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  auto x = Tensor<double>::full({3, 3, 1}, 1.0);
  auto w = Tensor<double>::full({3, 3, 1, 1}, 1.0);
  auto y = conv2d(x, w, Tensor<double>::zeros({1}), 1, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 3, 1}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);
  EXPECT_DOUBLE_EQ(y[1], 6.0);
  EXPECT_DOUBLE_EQ(y[4], 9.0);
}

TEST(Conv2d, PointwiseIdentity) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({5, 4, 3}, rng, 1.0, false);
  auto w = Tensor<double>::zeros({1, 1, 3, 3});
  for (Index c = 0; c < 3; ++c) w.mutable_values()[c * 3 + c] = 1.0;
  auto y = conv2d(x, w, Tensor<double>::zeros({3}));
  EXPECT_TRUE((y.values() == x.values()).all());
}

TEST(Conv2d, OutputShape) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({9, 7, 2}, rng, 1.0, false);
  auto y = conv2d(x, random_tensor({3, 3, 2, 5}, rng, 1.0, false), Tensor<double>::zeros({5}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{5, 4, 5}));
}

TEST(Conv2d, MatchesDirectLoopsOnRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index stride = 1 + trial % 2, pad = trial % 3;
    auto x = random_tensor({6 + trial % 3, 5 + trial % 4, 1 + trial % 3}, rng, 1.0, false);
    auto w = random_tensor({3, 2 + trial % 2, x.dim(2), 2}, rng, 1.0, false);
    auto b = random_tensor({2}, rng, 1.0, false);
    auto y = conv2d(x, w, b, stride, pad);
    EXPECT_LT((y.values() - naive_conv(x, w, b, stride, pad)).abs().maxCoeff(), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  auto x = Tensor<double>::zeros({4, 4, 3});
  EXPECT_THROW(conv2d(x, Tensor<double>::zeros({3, 3, 2, 1}), Tensor<double>::zeros({1})), std::invalid_argument);
  EXPECT_THROW(conv2d(x, Tensor<double>::zeros({3, 3, 3, 1}), Tensor<double>::zeros({2})), std::invalid_argument);
}

TEST(DeformableConv2d, ZeroOffsetsEqualPlainConvolution) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({6, 6, 2}, rng, 1.0, false);
  auto w = random_tensor({3, 3, 2, 4}, rng, 1.0, false);
  auto b = random_tensor({4}, rng, 1.0, false);
  auto plain = conv2d(x, w, b, 1, 1);
  auto deform = deformable_conv2d(x, Tensor<double>::zeros({6, 6, 18}), w, b, 1, 1);
  EXPECT_LT((plain.values() - deform.values()).abs().maxCoeff(), 1e-12);
}

TEST(DeformableConv2d, MatchesBilinearOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Index stride = 1 + trial % 2;
    auto x = random_tensor({7, 6, 2}, rng, 1.0, false);
    auto w = random_tensor({3, 3, 2, 3}, rng, 1.0, false);
    auto b = random_tensor({3}, rng, 1.0, false);
    const Index ho = (7 + 2 - 3) / stride + 1, wo = (6 + 2 - 3) / stride + 1;
    auto off = random_tensor({ho, wo, 18}, rng, 1.5, false);
    auto y = deformable_conv2d(x, off, w, b, stride, 1);
    EXPECT_LT((y.values() - naive_deformable(x, off, w, b, stride, 1)).abs().maxCoeff(), 1e-12);
  }
}

TEST(DeformableConv2d, FarOffsetsReadZero) {
  auto x = Tensor<double>::full({4, 4, 1}, 1.0);
  auto off = Tensor<double>::full({4, 4, 18}, 100.0);
  auto y = deformable_conv2d(x, off, Tensor<double>::full({3, 3, 1, 1}, 1.0), Tensor<double>::full({1}, 0.5), 1, 1);
  EXPECT_TRUE((y.values() == 0.5).all());
}

TEST(MaxPool2d, PicksWindowMaximum) {
  auto x = Tensor<double>::from({2, 2, 1}, {1, 2, 3, 4});
  auto y = max_pool2d(x, 2, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);
}

TEST(MaxPool2d, GradientGoesToFirstMaximum) {
  auto x = Tensor<double>::from({2, 2, 1}, {5, 5, 1, 5}, true);
  {
    Tape<double> tape;
    tape.backward(sum(max_pool2d(x, 2, 2)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[3], 0.0);
}

TEST(Pooling, PatchAverageAndGlobalAverage) {
  Array<double> v(4 * 4 * 2);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  Tensor<double> x({4, 4, 2}, v);
  auto pap = patch_average_pool(x, 2);
  EXPECT_EQ(pap.shape(), (Shape{2, 2, 2}));
  // tile (0,0) channel 0: pixels (0,0),(0,1),(1,0),(1,1) -> 0,2,8,10
  EXPECT_DOUBLE_EQ(pap[0], 5.0);
  auto gap = global_average_pool(x);
  EXPECT_EQ(gap.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(gap[0], 15.0);
  EXPECT_DOUBLE_EQ(gap[1], 16.0);
  EXPECT_THROW(patch_average_pool(x, 3), std::invalid_argument);
}

TEST(Pooling, GlobalAverageGradientIsUniform) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 5, 2}, rng);
  {
    Tape<double> tape;
    tape.backward(sum(global_average_pool(x)));
  }
  EXPECT_TRUE(((x.grad() - 1.0 / 15.0).abs() < 1e-15).all());
}

TEST(InstanceNorm, ChannelsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({6, 6, 3}, rng, 4.0, false);
  auto y = instance_norm(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), 0.0);
  for (Index c = 0; c < 3; ++c) {
    double m = 0, s = 0;
    for (Index i = 0; i < 36; ++i) m += y[i * 3 + c];
    m /= 36;
    for (Index i = 0; i < 36; ++i) s += (y[i * 3 + c] - m) * (y[i * 3 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(s / 36, 1.0, 1e-12);
  }
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(8);
  auto y = softmax(random_tensor({5, 7}, rng, 10.0, false));
  for (Index r = 0; r < 5; ++r) EXPECT_NEAR(y.values().segment(r * 7, 7).sum(), 1.0, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  EXPECT_NEAR(cross_entropy(Tensor<double>::zeros({10}), 3).item(), std::log(10.0), 1e-12);
  auto confident = Tensor<double>::zeros({10});
  confident.mutable_values()[2] = 30;
  EXPECT_LE(cross_entropy(confident, 2).item(), 1e-12);
  EXPECT_THROW(cross_entropy(confident, 10), std::out_of_range);
}

TEST(Sine, AmplitudeAndFrequency) {
  auto x = Tensor<double>::from({2}, {0.5, -1.0});
  auto y = sine(x, Tensor<double>::scalar(2.0), Tensor<double>::scalar(3.0));
  EXPECT_DOUBLE_EQ(y[0], 2.0 * std::sin(1.5));
  EXPECT_DOUBLE_EQ(y[1], 2.0 * std::sin(-3.0));
}

TEST(PatchTokens, RoundTrip) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({8, 8, 3}, rng, 1.0, false);
  auto tokens = patch_tokens(x, 2);
  EXPECT_EQ(tokens.shape(), (Shape{16, 12}));
  // token 5 is tile (1,1): its first entry is pixel (2,2) channel 0
  EXPECT_DOUBLE_EQ(tokens[5 * 12], x[(2 * 8 + 2) * 3]);
  EXPECT_TRUE((tokens_to_image(tokens, 4, 2, 3).values() == x.values()).all());
}

// Finite-difference checks against the test-local oracle.

TEST(OpGradients, Elementwise) {
  std::mt19937_64 rng(10);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  auto amp = random_tensor({1}, rng), freq = random_tensor({1}, rng);
  auto w = random_tensor({3, 4}, rng, 1.0, false);
  EXPECT_LT(gradient_error([&] { return sum(mul(w, sigmoid(mul(a, b)))); }, {a, b}), 1e-6);
  EXPECT_LT(gradient_error([&] { return sum(mul(w, sine(sub(a, b), amp, freq))); }, {a, b, amp, freq}), 1e-6);
  EXPECT_LT(gradient_error([&] { return mean(mul(w, relu(affine(a, 2.0, 0.3)))); }, {a}), 1e-6);
}

TEST(OpGradients, MatrixAndAttentionPieces) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({4, 3}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({5}, rng);
  auto g = random_tensor({5}, rng), beta = random_tensor({5}, rng);
  auto r = random_tensor({4, 5}, rng, 1.0, false);
  EXPECT_LT(gradient_error([&] { return sum(mul(r, softmax(linear(x, w, b)))); }, {x, w, b}), 1e-6);
  EXPECT_LT(gradient_error([&] { return sum(mul(r, layer_norm(linear(x, w, b), g, beta))); }, {x, w, b, g, beta}),
            1e-6);
  EXPECT_LT(gradient_error([&] { return cross_entropy(reshape(matmul(transpose(x), x), {9}), 4); }, {x}), 1e-6);
}

TEST(OpGradients, Convolutions) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({5, 5, 2}, rng), w = random_tensor({3, 3, 2, 3}, rng), b = random_tensor({3}, rng);
  auto off = random_tensor({3, 3, 18}, rng, 0.7);
  auto r1 = random_tensor({3, 3, 3}, rng, 1.0, false);
  auto r2 = random_tensor({3, 3, 3}, rng, 1.0, false);
  EXPECT_LT(gradient_error([&] { return sum(mul(r1, conv2d(x, w, b, 2, 1))); }, {x, w, b}), 1e-6);
  EXPECT_LT(gradient_error([&] { return sum(mul(r2, deformable_conv2d(x, off, w, b, 2, 1))); }, {x, off, w, b}),
            1e-5);
}

TEST(OpGradients, PoolingAndNormalization) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({4, 4, 3}, rng), g = random_tensor({3}, rng), beta = random_tensor({3}, rng);
  auto r = random_tensor({4, 4, 3}, rng, 1.0, false);
  auto r2 = random_tensor({2, 2, 3}, rng, 1.0, false);
  EXPECT_LT(gradient_error([&] { return sum(mul(r, instance_norm(x, g, beta))); }, {x, g, beta}), 1e-5);
  EXPECT_LT(gradient_error([&] { return sum(mul(r2, patch_average_pool(x, 2))); }, {x}), 1e-6);
  EXPECT_LT(gradient_error([&] { return sum(mul(r2, max_pool2d(x, 2, 2))); }, {x}), 1e-6);
}

}  // namespace
}  // namespace expnet
