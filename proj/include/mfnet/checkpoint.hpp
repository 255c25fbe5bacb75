#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mfnet/backbone.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// On disk: "MFNETCKP", u32 version, config text, u32 epoch, then parameter,
/// velocity and buffer records. Integers and floats are little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  /// Completed epochs; training resumes at this epoch index.
  std::uint32_t epoch = 0;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> velocity;
  std::vector<NamedTensor> buffers;
};

/// Snapshot of a float32 model; `optimizer` may be null.
Checkpoint capture_checkpoint(const Model& model, const SgdState* optimizer, std::string config_text,
                              std::uint32_t epoch);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into the model (and optimizer, if given). Names and shapes
/// must match the registry exactly; otherwise throws ConfigError listing every
/// missing, unexpected and reshaped entry.
void restore_checkpoint(const Checkpoint& checkpoint, Model& model, SgdState* optimizer);

}  // namespace mfnet
