#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mfnet/backbone.hpp"
#include "mfnet/data.hpp"
#include "mfnet/sgd.hpp"

namespace mfnet {

enum class SampleMode { Train, Eval };

struct SegmentPlan {
  int k = 5;
  SampleMode mode = SampleMode::Eval;
  std::uint64_t rng_seed = 0;
};

/// Half-open frame range [first, second) of segment `s` among k near-equal
/// segments; the first num_frames % k segments are one frame longer.
std::pair<int, int> segment_bounds(int num_frames, int k, int s);

/// One index per segment: a uniform draw (train) or the segment centre (eval).
/// Empty segments, which occur when num_frames < k, clamp to the last frame.
std::vector<int> sample_indices(int num_frames, int k, SampleMode mode, Rng& rng);
std::vector<int> sample_indices(int num_frames, const SegmentPlan& plan);

/// Turns clips into normalised network input.
struct InputSpec {
  AugmentSpec augment;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

/// (B, K, 3, crop_h, crop_w) batch. In train mode clip i draws its frame
/// indices and crop from stream seeds[i]; one crop is shared by all K frames.
Tensor assemble_batch(const std::vector<const VideoSample*>& clips, const std::vector<std::uint64_t>& seeds, int k,
                      SampleMode mode, const InputSpec& input, DType dtype, int workers = 0);

/// Mean over the K snippet logits: (B, K, C) -> (B, C).
Tensor consensus(const Tensor& snippet_logits);

/// Softmax of the averaged snippet logits for one clip.
std::vector<double> video_predict(const Model& model, const VideoSample& clip, const SegmentPlan& plan,
                                  const InputSpec& input);

struct TrainOptions {
  int k = 5;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int workers = 0;
  InputSpec input;
};

struct EpochMetrics {
  double loss = 0;
  double top1 = 0;
  double top5 = 0;
  std::int64_t count = 0;
};

/// One pass over a seeded shuffle of `data`. Randomness depends only on
/// (options.seed, epoch, clip position), never on `workers`.
EpochMetrics train_epoch(Model& model, const Dataset& data, const TrainOptions& options, SgdState& optimizer,
                         int epoch);

struct EvalResult {
  EpochMetrics metrics;
  /// confusion[true][predicted]
  std::vector<std::vector<std::int64_t>> confusion;
};

EvalResult evaluate(const Model& model, const Dataset& data, int k, const InputSpec& input, int batch_size = 16,
                    int workers = 0);

/// Fraction of class c's clips predicted as paired_class(c).
double within_pair_confusion(const EvalResult& result, int c);

/// Number of classes scoring strictly above `label`; top-n hit iff < n.
int rank_of(std::span<const double> scores, int label);

}  // namespace mfnet
