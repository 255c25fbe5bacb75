#pragma once

#include <cstdint>
#include <string>

#include "mfnet/ops.hpp"
#include "mfnet/param_registry.hpp"

namespace mfnet {

/// Where newly built layers put their tensors and how they seed them.
/// Each tensor's init stream is derived from (seed, name) so adding or
/// removing unrelated layers never perturbs the rest.
struct LayerContext {
  ParamRegistry* registry = nullptr;
  std::uint64_t seed = 0;
  DType dtype = DType::F32;

  Rng rng_for(const std::string& name) const { return Rng(derive_seed(seed, {fnv1a64(name)})); }
};

/// Zero-mean uniform with bound sqrt(6 / fan_in).
Tensor fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dtype);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(LayerContext& ctx, const std::string& name, std::int64_t in_channels, std::int64_t out_channels, int kernel,
         Conv2dOptions options, bool with_bias);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight_, bias_, options_); }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  Conv2dOptions options() const { return options_; }

 private:
  Tensor weight_;
  Tensor bias_;
  Conv2dOptions options_{};
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(LayerContext& ctx, const std::string& name, std::int64_t channels);

  Tensor operator()(const Tensor& x, bool training) const;

  const Tensor& gamma() const { return gamma_; }
  const Tensor& beta() const { return beta_; }
  const RunningStats& running() const { return running_; }

  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

 private:
  Tensor gamma_;
  Tensor beta_;
  mutable RunningStats running_;
};

class Linear {
 public:
  Linear() = default;
  Linear(LayerContext& ctx, const std::string& name, std::int64_t in_features, std::int64_t out_features);

  Tensor operator()(const Tensor& x) const { return linear(x, weight_, bias_); }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

}  // namespace mfnet
