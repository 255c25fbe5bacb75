#include "mfnet/sgd.hpp"

#include <cmath>

namespace mfnet {

SgdState make_sgd_state(const ParamRegistry& registry, double learning_rate, double momentum, double weight_decay) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  SgdState state{learning_rate, momentum, weight_decay, {}};
  state.velocity.reserve(registry.params().size());
  for (const auto& p : registry.params()) state.velocity.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
  return state;
}

void sgd_step(ParamRegistry& registry, SgdState& state) {
  const auto& params = registry.params();
  if (state.velocity.size() != params.size()) throw TrainingError("optimizer state does not match registry");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.has_grad()) throw TrainingError("parameter '" + params[i].name + "' has no gradient");
    if (state.velocity[i].shape() != params[i].tensor.shape())
      throw TrainingError("velocity shape mismatch for '" + params[i].name + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    const double decay = params[i].apply_weight_decay ? state.weight_decay : 0.0;
    dispatch(p.dtype(), [&]<typename T>() {
      auto w = p.data<T>();
      auto g = p.grad<T>();
      auto v = state.velocity[i].data<T>();
      const T m = static_cast<T>(state.momentum), d = static_cast<T>(decay), lr = static_cast<T>(state.learning_rate);
      for (std::size_t j = 0; j < w.size(); ++j) {
        v[j] = m * v[j] + g[j] + d * w[j];
        w[j] -= lr * v[j];
      }
    });
  }
  registry.zero_grad();
}

StepLr::StepLr(double base_lr, int step, double gamma) : base_(base_lr), step_(step), gamma_(gamma) {
  if (step < 1) throw ConfigError("lr step must be positive");
}

double StepLr::at(int epoch) const { return base_ * std::pow(gamma_, epoch / step_); }

}  // namespace mfnet
