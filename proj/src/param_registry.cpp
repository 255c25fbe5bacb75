#include "mfnet/param_registry.hpp"

namespace mfnet {

void ParamRegistry::claim(const std::string& name) {
  if (name.empty()) throw ConfigError("parameter names must be non-empty");
  if (param_index_.count(name) || buffer_index_.count(name))
    throw ConfigError("duplicate parameter name '" + name + "'");
}

Tensor ParamRegistry::add_param(const std::string& name, Tensor tensor, bool apply_weight_decay) {
  claim(name);
  tensor.set_requires_grad(true);
  param_index_.emplace(name, params_.size());
  params_.push_back({name, tensor, apply_weight_decay});
  return tensor;
}

Tensor ParamRegistry::add_buffer(const std::string& name, Tensor tensor) {
  claim(name);
  buffer_index_.emplace(name, buffers_.size());
  buffers_.push_back({name, tensor});
  return tensor;
}

const ParamEntry* ParamRegistry::find_param(const std::string& name) const {
  auto it = param_index_.find(name);
  return it == param_index_.end() ? nullptr : &params_[it->second];
}

const BufferEntry* ParamRegistry::find_buffer(const std::string& name) const {
  auto it = buffer_index_.find(name);
  return it == buffer_index_.end() ? nullptr : &buffers_[it->second];
}

std::int64_t ParamRegistry::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

}  // namespace mfnet
