#include "mfnet/backbone.hpp"

#include <algorithm>

namespace mfnet {

bool MotionConfig::enabled_at(int stage) const {
  return variant.has_value() && std::find(stages.begin(), stages.end(), stage) != stages.end();
}

std::vector<std::int64_t> ModelConfig::stage_extents() const {
  std::vector<std::int64_t> extents;
  std::int64_t e = conv_output_extent(input_size, 7, 2, 3);
  e = e > 0 ? conv_output_extent(e, 3, 2, 1) : 0;
  if (e < 1) throw ConfigError("input size " + std::to_string(input_size) + " vanishes in the stem");
  extents.push_back(e);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].downsample) e = conv_output_extent(e, 3, 2, 1);
    if (e < 1)
      throw ConfigError("spatial extent reaches zero at stage " + std::to_string(i + 2) + " for input size " +
                        std::to_string(input_size));
    extents.push_back(e);
  }
  return extents;
}

std::vector<std::int64_t> ModelConfig::stage_channels() const {
  std::vector<std::int64_t> channels{stem_channels};
  for (const auto& s : stages) channels.push_back(s.out_channels);
  return channels;
}

void ModelConfig::validate() const {
  if (in_channels < 1 || stem_channels < 1 || num_classes < 1) throw ConfigError("channel/class counts must be positive");
  if (stages.empty()) throw ConfigError("at least one residual stage is required");
  for (const auto& s : stages)
    if (s.out_channels < 1 || s.num_residual_blocks < 0) throw ConfigError("invalid residual stage spec");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("dropout keep probability must lie in (0, 1]");
  if (motion.variant) {
    if (motion.reduction_factor < 1) throw ConfigError("motion reduction factor must be >= 1");
    const int last_motion_stage = stage_count() - 1;
    for (int s : motion.stages)
      if (s < 1 || s > last_motion_stage)
        throw ConfigError("motion blocks attach to stages 1.." + std::to_string(last_motion_stage) + ", got " +
                          std::to_string(s));
  }
  (void)stage_extents();
}

Tensor Model::ResidualBlock::operator()(const Tensor& x, bool training) const {
  Tensor y = relu(bn1(conv1(x), training));
  y = bn2(conv2(y), training);
  const Tensor skip = proj ? (*proj_bn)((*proj)(x), training) : x;
  return relu(add(y, skip));
}

bool Model::has_motion() const {
  return std::any_of(motion_.begin(), motion_.end(), [](const auto& m) { return m.has_value(); });
}

const MotionBlock* Model::motion_block(int stage) const {
  if (stage < 1 || stage > static_cast<int>(motion_.size())) return nullptr;
  const auto& m = motion_[static_cast<std::size_t>(stage - 1)];
  return m ? &*m : nullptr;
}

Tensor Model::run(const Tensor& folded, std::int64_t segments, bool use_motion, bool training, Rng& dropout_rng,
                  ForwardTrace* trace) const {
  if (folded.ndim() != 4 || folded.dim(1) != config_.in_channels || folded.dim(2) != config_.input_size ||
      folded.dim(3) != config_.input_size)
    throw ConfigError("model expects frames of " + std::to_string(config_.in_channels) + "x" +
                      std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) + ", got " +
                      shape_str(folded.shape()));
  const auto after_stage = [&](Tensor x, std::size_t index) {
    if (use_motion && motion_[index]) x = motion_[index]->forward_snippets(x, segments, training);
    if (trace) trace->stage_outputs.push_back(x.shape());
    return x;
  };

  Tensor x = relu(stem_bn_(stem_conv_(folded), training));
  x = after_stage(max_pool2d(x, 3, 2, 1), 0);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const auto& block : stages_[s]) x = block(x, training);
    x = after_stage(x, s + 1);
  }
  x = dropout(global_avg_pool(x), config_.dropout_keep, training, dropout_rng);
  return classifier_(x);
}

Tensor Model::forward_snippets(const Tensor& frames, bool training, Rng& dropout_rng, ForwardTrace* trace) const {
  if (frames.ndim() != 5) throw ConfigError("forward_snippets expects (B,K,C,H,W), got " + shape_str(frames.shape()));
  const std::int64_t batch = frames.dim(0), segments = frames.dim(1);
  if (has_motion() && segments < 2)
    throw ConfigError("motion blocks need K >= 2 snippets, got K=" + std::to_string(segments));
  const Tensor folded = reshape(frames, {batch * segments, frames.dim(2), frames.dim(3), frames.dim(4)});
  const Tensor logits = run(folded, segments, true, training, dropout_rng, trace);
  return reshape(logits, {batch, segments, config_.num_classes});
}

Tensor Model::forward_appearance(const Tensor& frames, bool training, Rng& dropout_rng, ForwardTrace* trace) const {
  return run(frames, 1, false, training, dropout_rng, trace);
}

Model build_model(const ModelConfig& config, std::uint64_t seed, DType dtype) {
  config.validate();
  Model model;
  model.config_ = config;
  model.dtype_ = dtype;
  LayerContext ctx{&model.registry_, seed, dtype};

  const auto channels = config.stage_channels();
  model.stem_conv_ = Conv2d(ctx, "stage1.stem.conv", config.in_channels, config.stem_channels, 7, {2, 3}, false);
  model.stem_bn_ = BatchNorm2d(ctx, "stage1.stem.bn", config.stem_channels);

  const auto add_motion = [&](int stage, std::int64_t c) {
    if (!config.motion.enabled_at(stage)) {
      model.motion_.emplace_back();
      return;
    }
    MotionBlockSpec spec{*config.motion.variant, config.motion.reduction_factor, config.motion.directions, c};
    model.motion_.emplace_back(MotionBlock(ctx, "stage" + std::to_string(stage) + ".motion", spec));
  };
  add_motion(1, config.stem_channels);

  std::int64_t in = config.stem_channels;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const auto& spec = config.stages[s];
    const int stage = static_cast<int>(s) + 2;
    std::vector<Model::ResidualBlock> blocks;
    for (int b = 0; b < spec.num_residual_blocks; ++b) {
      const std::string name = "stage" + std::to_string(stage) + ".block" + std::to_string(b);
      const int stride = (b == 0 && spec.downsample) ? 2 : 1;
      Model::ResidualBlock block;
      block.conv1 = Conv2d(ctx, name + ".conv1", in, spec.out_channels, 3, {stride, 1}, false);
      block.bn1 = BatchNorm2d(ctx, name + ".bn1", spec.out_channels);
      block.conv2 = Conv2d(ctx, name + ".conv2", spec.out_channels, spec.out_channels, 3, {1, 1}, false);
      block.bn2 = BatchNorm2d(ctx, name + ".bn2", spec.out_channels);
      if (stride != 1 || in != spec.out_channels) {
        block.proj = Conv2d(ctx, name + ".proj", in, spec.out_channels, 1, {stride, 0}, false);
        block.proj_bn = BatchNorm2d(ctx, name + ".proj_bn", spec.out_channels);
      }
      blocks.push_back(std::move(block));
      in = spec.out_channels;
    }
    // A stage without blocks still has to reach its declared width for the
    // following motion block and classifier.
    if (spec.num_residual_blocks == 0 && (in != spec.out_channels || spec.downsample))
      throw ConfigError("stage " + std::to_string(stage) + " has no residual blocks but changes shape");
    model.stages_.push_back(std::move(blocks));
    add_motion(stage, channels[s + 1]);
  }
  model.classifier_ = Linear(ctx, "head.fc", in, config.num_classes);
  return model;
}

}  // namespace mfnet
