#pragma once

#include <vector>

#include "mfnet/param_registry.hpp"

namespace mfnet {

struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  /// One buffer per registry parameter, same order and shape.
  std::vector<Tensor> velocity;
};

SgdState make_sgd_state(const ParamRegistry& registry, double learning_rate, double momentum, double weight_decay);

/// v <- momentum*v + grad + decay*param (decay only where flagged); param <- param - lr*v.
/// Gradients are cleared afterwards. Throws TrainingError if a parameter has no gradient.
void sgd_step(ParamRegistry& registry, SgdState& state);

/// lr(epoch) = base * gamma^floor(epoch / step), epochs counted from 0.
class StepLr {
 public:
  StepLr(double base_lr, int step, double gamma = 0.1);
  double at(int epoch) const;

 private:
  double base_;
  int step_;
  double gamma_;
};

}  // namespace mfnet
