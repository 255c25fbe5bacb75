#include "mfnet/tsn.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "mfnet/error.hpp"

namespace mfnet {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kClipStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

}  // namespace

std::pair<int, int> segment_bounds(int num_frames, int k, int s) {
  if (num_frames < 1 || k < 1 || s < 0 || s >= k) throw ConfigError("segment_bounds: bad arguments");
  const int base = num_frames / k, extra = num_frames % k;
  const int start = s * base + std::min(s, extra);
  return {start, start + base + (s < extra ? 1 : 0)};
}

std::vector<int> sample_indices(int num_frames, int k, SampleMode mode, Rng& rng) {
  if (num_frames < 1) throw InputError("clip has no frames");
  if (k < 1) throw ConfigError("segment count must be >= 1");
  std::vector<int> indices(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) {
    const auto [start, end] = segment_bounds(num_frames, k, s);
    int i = num_frames - 1;
    if (end > start) i = mode == SampleMode::Eval ? start + (end - start) / 2 : static_cast<int>(rng.uniform_int(start, end - 1));
    indices[static_cast<std::size_t>(s)] = i;
  }
  return indices;
}

std::vector<int> sample_indices(int num_frames, const SegmentPlan& plan) {
  Rng rng(plan.rng_seed);
  return sample_indices(num_frames, plan.k, plan.mode, rng);
}

namespace {

template <typename T>
void fill_clip(const VideoSample& clip, std::uint64_t seed, int k, SampleMode mode, const InputSpec& input, T* dst) {
  Rng rng(seed);
  const auto indices = sample_indices(clip.num_frames(), k, mode, rng);
  const CropWindow window = mode == SampleMode::Train ? draw_crop(clip.height(), clip.width(), input.augment, rng)
                                                      : center_crop(clip.height(), clip.width());
  const int h = input.augment.crop_height, w = input.augment.crop_width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int s = 0; s < k; ++s) {
    const ImageF img = apply_crop(clip.frame(indices[static_cast<std::size_t>(s)]), window, h, w);
    for (int c = 0; c < Frame::kChannels; ++c) {
      const double m = input.mean[static_cast<std::size_t>(c)], sd = input.stddev[static_cast<std::size_t>(c)];
      const float* src = img.values.data() + c * plane;
      T* out = dst + (static_cast<std::size_t>(s) * Frame::kChannels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[i] = static_cast<T>((src[i] - m) / sd);
    }
  }
}

}  // namespace

Tensor assemble_batch(const std::vector<const VideoSample*>& clips, const std::vector<std::uint64_t>& seeds, int k,
                      SampleMode mode, const InputSpec& input, DType dtype, int workers) {
  if (clips.empty() || clips.size() != seeds.size()) throw ConfigError("assemble_batch: clips and seeds must match");
  const auto batch = static_cast<std::int64_t>(clips.size());
  const int h = input.augment.crop_height, w = input.augment.crop_width;
  Tensor out = Tensor::zeros({batch, k, Frame::kChannels, h, w}, dtype);
  const std::size_t clip_size = static_cast<std::size_t>(k) * Frame::kChannels * h * w;
  dispatch(dtype, [&]<typename T>() {
    T* base = out.data<T>().data();
    const auto run = [&](std::size_t first, std::size_t stride) {
      for (std::size_t i = first; i < clips.size(); i += stride)
        fill_clip<T>(*clips[i], seeds[i], k, mode, input, base + i * clip_size);
    };
    if (workers <= 0) {
      run(0, 1);
      return;
    }
    const auto n = static_cast<std::size_t>(std::min<std::int64_t>(workers, batch));
    std::vector<std::future<void>> jobs;
    for (std::size_t t = 0; t < n; ++t) jobs.push_back(std::async(std::launch::async, run, t, n));
    for (auto& j : jobs) j.get();
  });
  return out;
}

Tensor consensus(const Tensor& snippet_logits) {
  if (snippet_logits.ndim() != 3) throw ConfigError("consensus expects (B,K,C), got " + shape_str(snippet_logits.shape()));
  return mean_dim(snippet_logits, 1);
}

std::vector<double> video_predict(const Model& model, const VideoSample& clip, const SegmentPlan& plan,
                                  const InputSpec& input) {
  NoGradGuard no_grad;
  const Tensor frames = assemble_batch({&clip}, {plan.rng_seed}, plan.k, plan.mode, input, model.dtype());
  Rng unused;
  const Tensor logits = consensus(model.forward_snippets(frames, false, unused));
  return softmax_rows(logits).front();
}

int rank_of(std::span<const double> scores, int label) {
  const double target = scores[static_cast<std::size_t>(label)];
  return static_cast<int>(std::count_if(scores.begin(), scores.end(), [&](double s) { return s > target; }));
}

namespace {

void tally(const Tensor& logits, std::span<const int> labels, EpochMetrics& m,
           std::vector<std::vector<std::int64_t>>* confusion) {
  const std::int64_t classes = logits.dim(1);
  const int top_n = static_cast<int>(std::min<std::int64_t>(5, classes));
  const auto values = logits.to_vector();
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const std::span<const double> row(values.data() + b * classes, static_cast<std::size_t>(classes));
    const int rank = rank_of(row, labels[b]);
    m.top1 += rank == 0;
    m.top5 += rank < top_n;
    if (confusion) {
      const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
      ++(*confusion)[static_cast<std::size_t>(labels[b])][static_cast<std::size_t>(pred)];
    }
  }
}

void finalize(EpochMetrics& m) {
  if (m.count == 0) return;
  m.loss /= static_cast<double>(m.count);
  m.top1 /= static_cast<double>(m.count);
  m.top5 /= static_cast<double>(m.count);
}

struct Batch {
  std::vector<const VideoSample*> clips;
  std::vector<std::uint64_t> seeds;
  std::vector<int> labels;
};

}  // namespace

EpochMetrics train_epoch(Model& model, const Dataset& data, const TrainOptions& options, SgdState& optimizer,
                         int epoch) {
  if (data.empty()) throw InputError("training set is empty");
  if (options.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (model.has_motion() && options.k < 2) throw ConfigError("motion blocks need k >= 2");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(options.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

  const auto batch_at = [&](std::size_t step) {
    Batch b;
    const std::size_t first = step * static_cast<std::size_t>(options.batch_size);
    const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(options.batch_size));
    for (std::size_t i = first; i < last; ++i) {
      b.clips.push_back(&data[order[i]]);
      b.seeds.push_back(derive_seed(options.seed, {kClipStream, static_cast<std::uint64_t>(epoch), i}));
      b.labels.push_back(data[order[i]].label());
    }
    return b;
  };
  const auto build = [&](std::size_t step) {
    const Batch b = batch_at(step);
    return assemble_batch(b.clips, b.seeds, options.k, SampleMode::Train, options.input, model.dtype(), options.workers);
  };

  const std::size_t steps = (order.size() + options.batch_size - 1) / options.batch_size;
  EpochMetrics m;
  std::future<Tensor> prefetch;
  if (options.workers > 0) prefetch = std::async(std::launch::async, build, 0);
  for (std::size_t step = 0; step < steps; ++step) {
    const Batch b = batch_at(step);
    Tensor frames = options.workers > 0 ? prefetch.get() : build(step);
    if (options.workers > 0 && step + 1 < steps) prefetch = std::async(std::launch::async, build, step + 1);

    Rng dropout_rng(derive_seed(options.seed, {kDropoutStream, static_cast<std::uint64_t>(epoch), step}));
    const Tensor logits = consensus(model.forward_snippets(frames, true, dropout_rng));
    const Tensor loss = softmax_cross_entropy(logits, b.labels);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value))
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
    backward(loss);
    sgd_step(model.registry(), optimizer);

    const auto n = static_cast<std::int64_t>(b.labels.size());
    m.loss += loss_value * static_cast<double>(n);
    m.count += n;
    tally(logits, b.labels, m, nullptr);
  }
  finalize(m);
  return m;
}

EvalResult evaluate(const Model& model, const Dataset& data, int k, const InputSpec& input, int batch_size,
                    int workers) {
  if (data.empty()) throw InputError("evaluation set is empty");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (model.has_motion() && k < 2) throw ConfigError("motion blocks need k >= 2");
  NoGradGuard no_grad;
  const auto classes = static_cast<std::size_t>(model.config().num_classes);
  EvalResult result;
  result.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  Rng unused;
  for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch_size)) {
    Batch b;
    for (std::size_t i = first; i < std::min(data.size(), first + static_cast<std::size_t>(batch_size)); ++i) {
      if (data[i].label() < 0 || static_cast<std::size_t>(data[i].label()) >= classes)
        throw InputError("clip '" + data[i].id() + "' has label outside the model's classes");
      b.clips.push_back(&data[i]);
      b.seeds.push_back(0);
      b.labels.push_back(data[i].label());
    }
    const Tensor frames = assemble_batch(b.clips, b.seeds, k, SampleMode::Eval, input, model.dtype(), workers);
    const Tensor logits = consensus(model.forward_snippets(frames, false, unused));
    result.metrics.loss += softmax_cross_entropy(logits, b.labels).item() * static_cast<double>(b.labels.size());
    result.metrics.count += static_cast<std::int64_t>(b.labels.size());
    tally(logits, b.labels, result.metrics, &result.confusion);
  }
  finalize(result.metrics);
  return result;
}

double within_pair_confusion(const EvalResult& result, int c) {
  const auto& row = result.confusion.at(static_cast<std::size_t>(c));
  const std::int64_t total = std::accumulate(row.begin(), row.end(), std::int64_t{0});
  const auto partner = static_cast<std::size_t>(paired_class(c));
  if (total == 0 || partner >= row.size()) return 0.0;
  return static_cast<double>(row[partner]) / static_cast<double>(total);
}

}  // namespace mfnet
