#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfnet/tensor.hpp"

namespace mfnet {

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool apply_weight_decay = true;
};

struct BufferEntry {
  std::string name;
  Tensor tensor;
};

/// Insertion-ordered, uniquely named trainable tensors plus non-trainable
/// buffers (batch-norm running statistics).
class ParamRegistry {
 public:
  /// Registers a trainable tensor (requires_grad is switched on). Returns the stored handle.
  Tensor add_param(const std::string& name, Tensor tensor, bool apply_weight_decay);
  Tensor add_buffer(const std::string& name, Tensor tensor);

  const std::vector<ParamEntry>& params() const { return params_; }
  const std::vector<BufferEntry>& buffers() const { return buffers_; }

  const ParamEntry* find_param(const std::string& name) const;
  const BufferEntry* find_buffer(const std::string& name) const;

  /// Total scalar count over trainable tensors.
  std::int64_t parameter_count() const;
  void zero_grad();

 private:
  void claim(const std::string& name);

  std::vector<ParamEntry> params_;
  std::vector<BufferEntry> buffers_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
};

}  // namespace mfnet
