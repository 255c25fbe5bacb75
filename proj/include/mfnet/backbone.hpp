#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfnet/motion.hpp"
#include "mfnet/nn.hpp"

namespace mfnet {

/// A residual stage of the appearance network.
struct StageSpec {
  std::int64_t out_channels = 8;
  int num_residual_blocks = 1;
  /// Entry block uses stride 2.
  bool downsample = false;
};

struct MotionConfig {
  /// nullopt: no motion blocks at all (TSN baseline).
  std::optional<FusionVariant> variant = FusionVariant::Concat;
  /// 1-based stage numbers that receive a motion block; stage 1 is the stem.
  std::vector<int> stages = {1, 2, 3, 4, 5};
  int reduction_factor = 4;
  DirectionSet directions = DirectionSet::standard();

  bool enabled_at(int stage) const;
};

/// Stem (7x7/2 conv, BN, ReLU, 3x3/2 max-pool) + residual stages + head
/// (global pool, dropout, linear). Defaults are the desk-scale toy network.
struct ModelConfig {
  std::int64_t in_channels = 3;
  std::int64_t input_size = 64;
  std::int64_t stem_channels = 8;
  std::vector<StageSpec> stages = {{8, 1, false}, {16, 1, true}, {32, 1, true}, {64, 1, true}};
  std::int64_t num_classes = 6;
  double dropout_keep = 0.5;
  MotionConfig motion;

  /// Number of stages including stem and head.
  int stage_count() const { return static_cast<int>(stages.size()) + 2; }
  /// Spatial extent after each of the stem and residual stages; throws ConfigError if any reaches zero.
  std::vector<std::int64_t> stage_extents() const;
  /// Channel count leaving each of the stem and residual stages.
  std::vector<std::int64_t> stage_channels() const;
  void validate() const;
};

/// Output shapes of the stem and residual stages, captured during a forward pass.
struct ForwardTrace {
  std::vector<Shape> stage_outputs;
};

class Model {
 public:
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamRegistry& registry() { return registry_; }
  const ParamRegistry& registry() const { return registry_; }
  std::int64_t parameter_count() const { return registry_.parameter_count(); }
  DType dtype() const { return dtype_; }
  bool has_motion() const;
  /// Motion block after 1-based stage `stage`, or nullptr.
  const MotionBlock* motion_block(int stage) const;

  /// frames (B, K, C, H, W) -> per-snippet logits (B, K, classes). Batch-norm
  /// statistics are taken over the folded B*K batch.
  Tensor forward_snippets(const Tensor& frames, bool training, Rng& dropout_rng, ForwardTrace* trace = nullptr) const;

  /// frames (N, C, H, W) -> logits (N, classes) through the appearance path only.
  Tensor forward_appearance(const Tensor& frames, bool training, Rng& dropout_rng, ForwardTrace* trace = nullptr) const;

 private:
  friend Model build_model(const ModelConfig& config, std::uint64_t seed, DType dtype);

  struct ResidualBlock {
    Conv2d conv1;
    BatchNorm2d bn1;
    Conv2d conv2;
    BatchNorm2d bn2;
    std::optional<Conv2d> proj;
    std::optional<BatchNorm2d> proj_bn;

    Tensor operator()(const Tensor& x, bool training) const;
  };

  Model() = default;
  Tensor run(const Tensor& folded, std::int64_t segments, bool use_motion, bool training, Rng& dropout_rng,
             ForwardTrace* trace) const;

  ModelConfig config_;
  DType dtype_ = DType::F32;
  ParamRegistry registry_;
  Conv2d stem_conv_;
  BatchNorm2d stem_bn_;
  std::vector<std::vector<ResidualBlock>> stages_;
  /// Index 0 is the stem, index i the i-th residual stage.
  std::vector<std::optional<MotionBlock>> motion_;
  Linear classifier_;
};

/// Deterministic in (config, seed, dtype).
Model build_model(const ModelConfig& config, std::uint64_t seed, DType dtype = DType::F32);

}  // namespace mfnet
