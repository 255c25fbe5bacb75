#include <gtest/gtest.h>

#include "mfnet/error.hpp"
#include "mfnet/ops.hpp"

using namespace mfnet;

TEST(Tensor, ShapeAndStorageAgree) {
  Rng rng(3);
  for (const Shape& s : {Shape{1}, Shape{2, 3}, Shape{2, 1, 4, 5}, Shape{3, 2, 1, 2, 2}}) {
    Tensor t = Tensor::normal(s, 0, 1, rng);
    EXPECT_EQ(t.numel(), shape_numel(s));
    EXPECT_EQ(static_cast<std::int64_t>(t.data<float>().size()), t.numel());
    EXPECT_EQ(t.shape(), s);
  }
}

TEST(Tensor, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor::zeros({2, 0, 3}), ConfigError);
  EXPECT_THROW(Tensor::zeros({-1}), ConfigError);
}

TEST(Tensor, GradHasDataShape) {
  Tensor x = Tensor::full({2, 3}, 1.5, DType::F64);
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad_tensor().shape(), x.shape());
  for (double g : x.grad<double>()) EXPECT_DOUBLE_EQ(g, 3.0);
}

TEST(Tensor, LeafGradientsAccumulateAcrossBackwardCalls) {
  Tensor x = Tensor::full({3}, 2.0, DType::F64);
  x.set_requires_grad(true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 3.0)));
  for (double g : x.grad<double>()) EXPECT_DOUBLE_EQ(g, 5.0);
  x.zero_grad();
  for (double g : x.grad<double>()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Tensor, SharedSubgraphGetsSummedGradient) {
  Tensor x = Tensor::from_values({2}, {1.0, -2.0}, DType::F64);
  x.set_requires_grad(true);
  const Tensor y = scale(x, 3.0);
  backward(sum(add(mul(y, y), y)));
  // d/dx (9x^2 + 3x) = 18x + 3
  EXPECT_DOUBLE_EQ(x.grad<double>()[0], 21.0);
  EXPECT_DOUBLE_EQ(x.grad<double>()[1], -33.0);
}

TEST(Tensor, BackwardNeedsScalar) {
  Tensor x = Tensor::full({2}, 1.0);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), UsageError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::full({2}, 1.0);
  x.set_requires_grad(true);
  Tensor y;
  {
    NoGradGuard guard;
    y = scale(x, 2.0);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, DetachSharesStorageCloneDoesNot) {
  Tensor x = Tensor::full({4}, 1.0);
  Tensor d = x.detach();
  Tensor c = x.clone();
  EXPECT_TRUE(d.same_storage(x));
  EXPECT_FALSE(c.same_storage(x));
  x.data<float>()[0] = 7.0f;
  EXPECT_EQ(d.data<float>()[0], 7.0f);
  EXPECT_EQ(c.data<float>()[0], 1.0f);
}

TEST(Tensor, DtypeConversionRoundTrips) {
  Rng rng(1);
  Tensor x = Tensor::normal({5}, 0, 1, rng, DType::F32);
  Tensor back = x.to(DType::F64).to(DType::F32);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(back.data<float>()[i], x.data<float>()[i]);
}

TEST(Tensor, FiniteCheck) {
  Tensor x = Tensor::full({3}, 1.0);
  EXPECT_TRUE(x.all_finite());
  x.data<float>()[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(x.all_finite());
}
