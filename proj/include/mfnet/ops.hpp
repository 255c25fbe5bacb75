#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mfnet/random.hpp"
#include "mfnet/tensor.hpp"

namespace mfnet {

// Differentiable dense operations. Activations are (batch, channel, height, width).

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// Output extent along one spatial axis (floor semantics).
std::int64_t conv_output_extent(std::int64_t input, int kernel, int stride, int padding);

/// Cross-correlation. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions options = {});

/// Per-channel running statistics updated in train mode.
struct RunningStats {
  Tensor mean;
  Tensor var;
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Train mode normalises with biased batch variance over (B,H,W) and folds the
/// unbiased variance into `running` by exponential averaging.
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& running,
                    BatchNormOptions options = {});

Tensor relu(const Tensor& x);
/// Padding cells never win the max.
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding = 0);
/// (B,C,H,W) -> (B,C)
Tensor global_avg_pool(const Tensor& x);
/// x (B,in), weight (out,in), optional bias (out) -> (B,out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Inverted dropout: kept units are scaled by 1/keep in training, identity otherwise.
Tensor dropout(const Tensor& x, double keep_probability, bool training, Rng& rng);
Tensor concat_channels(const std::vector<Tensor>& parts);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

/// Same data in a new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);
/// Mean over one axis, which is removed.
Tensor mean_dim(const Tensor& x, int axis);
/// Rows of the leading axis picked by `indices`.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> indices);
/// Inverse of gather_rows: a tensor with `rows` leading entries, zero except at `indices`.
Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> indices, std::int64_t rows);

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax without tape participation.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

}  // namespace mfnet
