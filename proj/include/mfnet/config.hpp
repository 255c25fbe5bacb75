#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfnet/backbone.hpp"
#include "mfnet/data.hpp"
#include "mfnet/tsn.hpp"

namespace mfnet {

/// Everything a command needs. Serialised as flat `section.key=value` lines.
struct RunConfig {
  // model
  std::int64_t input_size = 64;
  std::int64_t stem_channels = 8;
  std::vector<std::int64_t> stage_channels = {8, 16, 32, 64};
  std::vector<int> blocks_per_stage = {1, 1, 1, 1};
  std::int64_t num_classes = 6;
  double dropout_keep = 0.5;
  // motion
  std::optional<FusionVariant> motion_variant = FusionVariant::Concat;
  std::vector<int> motion_stages = {1, 2, 3, 4, 5};
  int motion_reduction = 4;
  DirectionSet motion_directions = DirectionSet::standard();
  // sampling
  int k_train = 5;
  int k_eval = 5;
  std::vector<int> k_eval_sweep;
  // optim
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 16;
  int epochs = 30;
  int lr_step = 20;
  double lr_gamma = 0.1;
  // data
  std::string data_root;
  std::optional<std::uint64_t> data_seed;
  int count_per_class = 250;
  double val_fraction = 0.2;
  int num_frames = 16;
  int image_size = 64;
  double noise_std = 0.02;
  int workers = 0;
  std::vector<double> mean = {0.5, 0.5, 0.5};
  std::vector<double> stddev = {0.25, 0.25, 0.25};
  // augment
  std::vector<double> scales = {1.0, 0.875, 0.75, 0.625};
  int crop_size = 64;
  bool flip = false;
  // run
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  int threads = 1;
  int checkpoint_every = 5;
  int eval_every = 1;
  // gradcheck
  int gradcheck_seeds = 20;
  double gradcheck_op_tolerance = 1e-4;
  double gradcheck_graph_tolerance = 1e-3;

  /// Sets one key from its text form. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Text form of one key.
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Cross-field checks; throws ConfigError.
  void validate() const;

  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
  ModelConfig model_config() const;
  InputSpec input_spec() const;
  SyntheticSpec synthetic_spec() const;
  TrainOptions train_options() const;
};

/// Applies `key=value` lines ('#' starts a comment) on top of `base`.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});
/// Applies one "key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);

/// Every key, one per line, in a fixed order.
std::string serialize_config(const RunConfig& config);

/// FNV-1a of the serialised config without run.out_dir, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Keys whose values change the model's parameter set.
bool same_architecture(const RunConfig& a, const RunConfig& b);

}  // namespace mfnet
