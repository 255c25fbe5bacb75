#include <gtest/gtest.h>

#include <cmath>

#include "mfnet/error.hpp"
#include "mfnet/ops.hpp"
#include "support/oracles.hpp"

using namespace mfnet;

namespace {

Tensor randn(Shape s, Rng& rng, DType dt = DType::F64) { return Tensor::normal(std::move(s), 0, 1, rng, dt); }

struct ConvCase {
  Shape x, w;
  int stride, pad;
  bool bias;
};

}  // namespace

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesDirectLoopsForwardAndBackward) {
  const ConvCase p = GetParam();
  Rng rng(17);
  Tensor x = randn(p.x, rng), w = randn(p.w, rng);
  Tensor b = p.bias ? randn({p.w[0]}, rng) : Tensor();
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  if (b.defined()) b.set_requires_grad(true);
  const Tensor y = conv2d(x, w, b, {p.stride, p.pad});

  const auto xv = x.to_vector(), wv = w.to_vector();
  const auto bv = b.defined() ? b.to_vector() : std::vector<double>{};
  std::int64_t oh = 0, ow = 0;
  const auto ref = oracle::conv2d(xv, oracle::dims(x), wv, oracle::dims(w), b.defined() ? &bv : nullptr, p.stride, p.pad, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{p.x[0], p.w[0], oh, ow}));
  EXPECT_LT(oracle::max_abs_diff(y.to_vector(), ref), 1e-12);

  // Gradients of L = sum(g * y) against differences through the oracle.
  const Tensor g = randn(y.shape(), rng);
  const auto gv = g.to_vector();
  backward(sum(mul(y, g)));
  const auto loss_x = [&](const std::vector<double>& xs) {
    std::int64_t a, c;
    const auto out = oracle::conv2d(xs, oracle::dims(x), wv, oracle::dims(w), b.defined() ? &bv : nullptr, p.stride, p.pad, a, c);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * gv[i];
    return s;
  };
  const auto loss_w = [&](const std::vector<double>& ws) {
    std::int64_t a, c;
    const auto out = oracle::conv2d(xv, oracle::dims(x), ws, oracle::dims(w), b.defined() ? &bv : nullptr, p.stride, p.pad, a, c);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * gv[i];
    return s;
  };
  EXPECT_LT(oracle::max_abs_diff(x.grad_tensor().to_vector(), oracle::numeric_gradient(loss_x, xv)), 1e-6);
  EXPECT_LT(oracle::max_abs_diff(w.grad_tensor().to_vector(), oracle::numeric_gradient(loss_w, wv)), 1e-6);
  if (b.defined()) {
    // dL/db_o = sum of g over channel o.
    const auto bg = b.grad_tensor().to_vector();
    const std::int64_t plane = oh * ow;
    for (std::int64_t o = 0; o < p.w[0]; ++o) {
      double s = 0;
      for (std::int64_t n = 0; n < p.x[0]; ++n)
        for (std::int64_t i = 0; i < plane; ++i) s += gv[static_cast<std::size_t>((n * p.w[0] + o) * plane + i)];
      EXPECT_NEAR(bg[static_cast<std::size_t>(o)], s, 1e-10);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{{2, 3, 6, 6}, {4, 3, 3, 3}, 1, 1, true},
                                           ConvCase{{1, 2, 7, 5}, {3, 2, 3, 3}, 2, 1, false},
                                           ConvCase{{3, 4, 5, 5}, {2, 4, 1, 1}, 1, 0, true},
                                           ConvCase{{2, 3, 9, 9}, {2, 3, 7, 7}, 2, 3, false},
                                           ConvCase{{5, 2, 4, 4}, {3, 2, 1, 1}, 2, 0, false},
                                           ConvCase{{6, 1, 5, 6}, {2, 1, 3, 2}, 1, 0, true}));

TEST(Conv, Float32AgreesWithFloat64) {
  Rng rng(5);
  const Tensor x = randn({9, 3, 16, 16}, rng), w = randn({8, 3, 3, 3}, rng);
  const auto y64 = conv2d(x, w, Tensor(), {1, 1}).to_vector();
  const auto y32 = conv2d(x.to(DType::F32), w.to(DType::F32), Tensor(), {1, 1}).to_vector();
  EXPECT_LT(oracle::max_abs_diff(y64, y32), 1e-4);
}

TEST(Conv, OutputExtent) {
  EXPECT_EQ(conv_output_extent(64, 7, 2, 3), 32);
  EXPECT_EQ(conv_output_extent(32, 3, 2, 1), 16);
  EXPECT_EQ(conv_output_extent(1, 3, 2, 1), 1);
  EXPECT_EQ(conv_output_extent(2, 5, 1, 0), 0);
}

TEST(Conv, ChannelMismatchIsConfigError) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 4, 3, 3}), Tensor(), {1, 1}), ConfigError);
}

TEST(BatchNorm, TrainModeMatchesTwoPassStatistics) {
  Rng rng(8);
  const Tensor x = Tensor::normal({4, 3, 5, 5}, 2.0, 3.0, rng, DType::F64);
  const Tensor gamma = randn({3}, rng), beta = randn({3}, rng);
  RunningStats running{Tensor::zeros({3}, DType::F64), Tensor::full({3}, 1.0, DType::F64)};
  const Tensor y = batch_norm2d(x, gamma, beta, running, {true, 0.1, 1e-5});

  std::vector<double> mean, var;
  const auto xv = x.to_vector();
  oracle::channel_stats(xv, oracle::dims(x), mean, var);
  const auto yv = y.to_vector();
  const double n = 4 * 25;
  for (int c = 0; c < 3; ++c) {
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 25; ++i) {
        const std::size_t k = static_cast<std::size_t>((b * 3 + c) * 25 + i);
        const double expect = gamma.to_vector()[c] * (xv[k] - mean[c]) / std::sqrt(var[c] + 1e-5) + beta.to_vector()[c];
        EXPECT_NEAR(yv[k], expect, 1e-10);
      }
    EXPECT_NEAR(running.mean.to_vector()[c], 0.1 * mean[c], 1e-12);
    EXPECT_NEAR(running.var.to_vector()[c], 0.9 + 0.1 * var[c] * n / (n - 1), 1e-12);
  }
}

TEST(BatchNorm, TrainOutputHasZeroMeanUnitVariancePerChannel) {
  Rng rng(2);
  const Tensor x = Tensor::normal({6, 2, 4, 4}, -1.0, 5.0, rng, DType::F64);
  RunningStats running{Tensor::zeros({2}, DType::F64), Tensor::full({2}, 1.0, DType::F64)};
  const Tensor y = batch_norm2d(x, Tensor::full({2}, 1.0, DType::F64), Tensor::zeros({2}, DType::F64), running);
  std::vector<double> mean, var;
  oracle::channel_stats(y.to_vector(), oracle::dims(y), mean, var);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(mean[c], 0.0, 1e-12);
    EXPECT_NEAR(var[c], 1.0, 1e-3);
  }
}

TEST(BatchNorm, EvalModeUsesRunningStatisticsAndLeavesThemAlone) {
  const Tensor x = Tensor::full({1, 2, 1, 1}, 3.0, DType::F64);
  RunningStats running{Tensor::from_values({2}, {1.0, -1.0}, DType::F64), Tensor::from_values({2}, {4.0, 0.25}, DType::F64)};
  const Tensor y = batch_norm2d(x, Tensor::full({2}, 1.0, DType::F64), Tensor::zeros({2}, DType::F64), running, {false});
  EXPECT_NEAR(y.to_vector()[0], 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_NEAR(y.to_vector()[1], 4.0 / std::sqrt(0.25 + 1e-5), 1e-12);
  EXPECT_EQ(running.mean.to_vector()[0], 1.0);
  EXPECT_EQ(running.var.to_vector()[1], 0.25);
}

TEST(BatchNorm, SingleValuePerChannelIsDegenerate) {
  RunningStats running{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  EXPECT_THROW(batch_norm2d(Tensor::zeros({1, 2, 1, 1}), Tensor::full({2}, 1.0), Tensor::zeros({2}), running),
               DegenerateBatchError);
}

TEST(MaxPool, MatchesBruteForce) {
  Rng rng(4);
  const Tensor x = randn({2, 3, 7, 6}, rng);
  const Tensor y = max_pool2d(x, 3, 2, 1);
  const auto xv = x.to_vector(), yv = y.to_vector();
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 3}));
  for (int n = 0; n < 6; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) {
        double m = -1e300;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) {
            const int yy = i * 2 - 1 + a, xx = j * 2 - 1 + b;
            if (yy >= 0 && yy < 7 && xx >= 0 && xx < 6) m = std::max(m, xv[static_cast<std::size_t>((n * 7 + yy) * 6 + xx)]);
          }
        EXPECT_EQ(yv[static_cast<std::size_t>((n * 4 + i) * 3 + j)], m);
      }
}

TEST(Linear, MatchesMatrixProduct) {
  const Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, -1, 0, 1}, DType::F64);
  const Tensor w = Tensor::from_values({2, 3}, {1, 0, -1, 2, 1, 0}, DType::F64);
  const Tensor b = Tensor::from_values({2}, {0.5, -0.5}, DType::F64);
  const auto y = linear(x, w, b).to_vector();
  EXPECT_EQ(y, (std::vector<double>{-1.5, 3.5, -1.5, -2.5}));
}

TEST(Dropout, InvertedScalingAndEvalIdentity) {
  Rng rng(1);
  const Tensor x = Tensor::full({1000}, 1.0, DType::F64);
  const auto y = dropout(x, 0.5, true, rng).to_vector();
  int kept = 0;
  for (double v : y) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  EXPECT_NEAR(kept, 500, 60);
  EXPECT_EQ(dropout(x, 0.5, false, rng).to_vector(), x.to_vector());
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogClasses) {
  const std::vector<int> labels{0, 5, 3};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({3, 6}, DType::F64), labels).item(), std::log(6.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  const std::vector<int> labels{0};
  const Tensor logits = Tensor::from_values({1, 2}, {1000.0, 0.0}, DType::F64);
  EXPECT_NEAR(softmax_cross_entropy(logits, labels).item(), 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  const std::vector<int> labels{6};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 6}), labels), InputError);
}

TEST(SoftmaxRows, SumToOne) {
  Rng rng(9);
  for (const auto& row : softmax_rows(randn({4, 6}, rng))) {
    double s = 0;
    for (double p : row) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Rows, GatherThenScatterPlacesRowsAndZeroFills) {
  Rng rng(3);
  const Tensor x = randn({4, 2}, rng);
  const std::vector<std::int64_t> idx{3, 1};
  const Tensor g = gather_rows(x, idx);
  const Tensor s = scatter_rows(g, idx, 4);
  const auto xv = x.to_vector(), sv = s.to_vector();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 2; ++c)
      EXPECT_EQ(sv[r * 2 + c], (r == 1 || r == 3) ? xv[r * 2 + c] : 0.0);
}

TEST(MeanDim, AveragesOneAxis) {
  const Tensor x = Tensor::from_values({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, DType::F64);
  EXPECT_EQ(mean_dim(x, 1).to_vector(), (std::vector<double>{2, 3, 6, 7}));
  EXPECT_EQ(mean_dim(x, 1).shape(), (Shape{2, 2}));
}

TEST(Concat, StacksChannels) {
  const Tensor a = Tensor::full({1, 1, 1, 2}, 1.0, DType::F64), b = Tensor::full({1, 2, 1, 2}, 2.0, DType::F64);
  EXPECT_EQ(concat_channels({a, b}).to_vector(), (std::vector<double>{1, 1, 2, 2, 2, 2}));
}
