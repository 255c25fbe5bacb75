#include "mfnet/nn.hpp"

#include <cmath>

namespace mfnet {

Tensor fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::uniform(shape, -bound, bound, rng, dtype);
}

Conv2d::Conv2d(LayerContext& ctx, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
               int kernel, Conv2dOptions options, bool with_bias)
    : options_(options) {
  Rng rng = ctx.rng_for(name + ".weight");
  weight_ = ctx.registry->add_param(
      name + ".weight",
      fan_in_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng, ctx.dtype),
      true);
  if (with_bias) bias_ = ctx.registry->add_param(name + ".bias", Tensor::zeros({out_channels}, ctx.dtype), false);
}

BatchNorm2d::BatchNorm2d(LayerContext& ctx, const std::string& name, std::int64_t channels) {
  gamma_ = ctx.registry->add_param(name + ".gamma", Tensor::full({channels}, 1.0, ctx.dtype), false);
  beta_ = ctx.registry->add_param(name + ".beta", Tensor::zeros({channels}, ctx.dtype), false);
  running_.mean = ctx.registry->add_buffer(name + ".running_mean", Tensor::zeros({channels}, ctx.dtype));
  running_.var = ctx.registry->add_buffer(name + ".running_var", Tensor::full({channels}, 1.0, ctx.dtype));
}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) const {
  return batch_norm2d(x, gamma_, beta_, running_, {training, kMomentum, kEpsilon});
}

Linear::Linear(LayerContext& ctx, const std::string& name, std::int64_t in_features, std::int64_t out_features) {
  Rng rng = ctx.rng_for(name + ".weight");
  weight_ = ctx.registry->add_param(name + ".weight",
                                    fan_in_uniform({out_features, in_features}, in_features, rng, ctx.dtype), true);
  bias_ = ctx.registry->add_param(name + ".bias", Tensor::zeros({out_features}, ctx.dtype), false);
}

}  // namespace mfnet
