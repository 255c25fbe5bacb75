#include <gtest/gtest.h>

#include "mfnet/backbone.hpp"
#include "mfnet/error.hpp"

using namespace mfnet;

namespace {

ModelConfig small_config(std::optional<FusionVariant> variant) {
  ModelConfig c;
  c.input_size = 32;
  c.stem_channels = 4;
  c.stages = {{4, 1, false}, {8, 1, true}};
  c.motion.variant = variant;
  c.motion.stages = {1, 2, 3};
  c.motion.reduction_factor = 2;
  return c;
}

Tensor frames(Shape s, std::uint64_t seed, DType dt = DType::F32) {
  Rng rng(seed);
  return Tensor::normal(std::move(s), 0, 1, rng, dt);
}

}  // namespace

TEST(Backbone, ToyNetworkMapsFramesToClassLogits) {
  ModelConfig c;
  c.motion.variant.reset();
  const Model m = build_model(c, 1);
  Rng rng(0);
  ForwardTrace trace;
  const Tensor logits = m.forward_appearance(frames({3, 3, 64, 64}, 2), false, rng, &trace);
  EXPECT_EQ(logits.shape(), (Shape{3, 6}));
  const std::vector<Shape> expect{{3, 8, 16, 16}, {3, 8, 16, 16}, {3, 16, 8, 8}, {3, 32, 4, 4}, {3, 64, 2, 2}};
  EXPECT_EQ(trace.stage_outputs, expect);
  EXPECT_EQ(c.stage_extents(), (std::vector<std::int64_t>{16, 16, 8, 4, 2}));
}

TEST(Backbone, MotionOffEqualsPerFrameNetworkBitwise) {
  const Model m = build_model(small_config(std::nullopt), 3);
  const Tensor clip = frames({2, 3, 3, 32, 32}, 4);
  for (bool training : {false, true}) {
    Rng r1(5), r2(5);
    const Tensor snippets = m.forward_snippets(clip, training, r1);
    const Tensor single = m.forward_appearance(reshape(clip, {6, 3, 32, 32}), training, r2);
    EXPECT_EQ(snippets.shape(), (Shape{2, 3, 6}));
    EXPECT_EQ(snippets.to_vector(), single.to_vector());
  }
}

TEST(Backbone, SameSeedGivesSameAppearanceWeightsWithOrWithoutMotion) {
  const Model base = build_model(small_config(std::nullopt), 11);
  const Model mf = build_model(small_config(FusionVariant::Concat), 11);
  for (const auto& p : base.registry().params()) {
    const ParamEntry* q = mf.registry().find_param(p.name);
    ASSERT_NE(q, nullptr) << p.name;
    EXPECT_EQ(q->tensor.to_vector(), p.tensor.to_vector()) << p.name;
  }
}

TEST(Backbone, MotionBlocksAddExactlyTheirOwnParameters) {
  for (auto variant : {FusionVariant::Sum, FusionVariant::Concat}) {
    const ModelConfig c = small_config(variant);
    const Model base = build_model(small_config(std::nullopt), 1);
    const Model mf = build_model(c, 1);
    std::int64_t extra = 0;
    for (std::int64_t ch : {4, 4, 8}) extra += MotionBlockSpec{variant, 2, DirectionSet::standard(), ch}.parameter_count();
    EXPECT_EQ(mf.parameter_count(), base.parameter_count() + extra);
  }
}

TEST(Backbone, DefaultParameterCounts) {
  ModelConfig c;
  EXPECT_EQ(build_model(c, 0).parameter_count(), 92782);
  c.motion.variant.reset();
  EXPECT_EQ(build_model(c, 0).parameter_count(), 78702);
}

TEST(Backbone, DropInKeepsEveryStageShape) {
  const Tensor clip = frames({2, 2, 3, 32, 32}, 6);
  ForwardTrace off_trace;
  Rng r0(1);
  build_model(small_config(std::nullopt), 2).forward_snippets(clip, true, r0, &off_trace);
  for (auto variant : {FusionVariant::Sum, FusionVariant::Concat}) {
    ForwardTrace t;
    Rng r(1);
    build_model(small_config(variant), 2).forward_snippets(clip, true, r, &t);
    EXPECT_EQ(t.stage_outputs, off_trace.stage_outputs);
  }
}

TEST(Backbone, ZeroCompressionMakesSumVariantEqualBaseline) {
  const Model base = build_model(small_config(std::nullopt), 7);
  Model mf = build_model(small_config(FusionVariant::Sum), 7);
  for (int s = 1; s <= 3; ++s) {
    Tensor w = mf.motion_block(s)->compress_conv().weight();
    for (auto& v : w.data<float>()) v = 0.0f;
  }
  const Tensor clip = frames({2, 3, 3, 32, 32}, 8);
  for (bool training : {true, false}) {
    Rng r1(3), r2(3);
    EXPECT_EQ(mf.forward_snippets(clip, training, r1).to_vector(), base.forward_snippets(clip, training, r2).to_vector());
  }
}

TEST(Backbone, NextSnippetInfluencesCurrentOnlyThroughMotion) {
  // Eval mode, so batch-norm does not couple the snippets.
  for (auto variant : {std::optional<FusionVariant>{}, std::optional<FusionVariant>{FusionVariant::Concat}}) {
    const Model m = build_model(small_config(variant), 5, DType::F64);
    Tensor clip = frames({1, 2, 3, 32, 32}, 9, DType::F64);
    clip.set_requires_grad(true);
    Rng rng(0);
    const Tensor logits = reshape(m.forward_snippets(clip, false, rng), {2, 6});
    const std::vector<std::int64_t> first{0};
    const std::vector<int> label{2};
    backward(softmax_cross_entropy(gather_rows(logits, first), label));
    const auto g = clip.grad_tensor().to_vector();
    double next_max = 0;
    for (std::size_t i = g.size() / 2; i < g.size(); ++i) next_max = std::max(next_max, std::abs(g[i]));
    if (variant) EXPECT_GT(next_max, 1e-8);
    else EXPECT_EQ(next_max, 0.0);
  }
}

TEST(Backbone, FiniteDifferenceProbeThroughNextSnippet) {
  const Model m = build_model(small_config(FusionVariant::Sum), 12, DType::F64);
  Tensor clip = frames({1, 2, 3, 32, 32}, 13, DType::F64);
  const std::vector<std::int64_t> first{0};
  const std::vector<int> label{4};
  const auto loss = [&](const Tensor& x) {
    Rng rng(0);
    return softmax_cross_entropy(gather_rows(reshape(m.forward_snippets(x, false, rng), {2, 6}), first), label);
  };
  clip.set_requires_grad(true);
  backward(loss(clip));
  const auto g = clip.grad_tensor().to_vector();
  auto data = clip.data<double>();
  const std::size_t snippet = 3 * 32 * 32;
  for (std::size_t i : {snippet + 5 * 32 + 7, snippet + 1024 + 16 * 32 + 16, snippet + 2048 + 31}) {
    const double orig = data[i];
    NoGradGuard guard;
    data[i] = orig + 1e-5;
    const double plus = loss(clip).item();
    data[i] = orig - 1e-5;
    const double minus = loss(clip).item();
    data[i] = orig;
    const double numeric = (plus - minus) / 2e-5;
    EXPECT_NEAR(g[i], numeric, 1e-6 + 1e-4 * std::abs(numeric));
  }
}

TEST(Backbone, MotionNeedsTwoSnippets) {
  const Model m = build_model(small_config(FusionVariant::Concat), 1);
  Rng rng(0);
  EXPECT_THROW(m.forward_snippets(frames({2, 1, 3, 32, 32}, 1), true, rng), ConfigError);
}

TEST(Backbone, RejectsMotionOnHeadOrMissingStage) {
  ModelConfig c = small_config(FusionVariant::Sum);
  c.motion.stages = {4};
  EXPECT_THROW(c.validate(), ConfigError);
  c.motion.stages = {0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, RejectsWrongFrameSize) {
  const Model m = build_model(small_config(std::nullopt), 1);
  Rng rng(0);
  EXPECT_THROW(m.forward_appearance(frames({1, 3, 30, 30}, 1), false, rng), ConfigError);
}
