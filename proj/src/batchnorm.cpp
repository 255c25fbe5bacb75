#include <cmath>
#include <vector>

#include "mfnet/ops.hpp"

namespace mfnet {

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& running,
                    BatchNormOptions options) {
  if (input.ndim() != 4) throw ConfigError("batch_norm2d expects (B,C,H,W), got " + shape_str(input.shape()));
  const std::int64_t batch = input.dim(0), channels = input.dim(1);
  const std::int64_t plane = input.dim(2) * input.dim(3);
  const std::int64_t count = batch * plane;
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running.mean), static_cast<const Tensor*>(&running.var)})
    if (t->ndim() != 1 || t->dim(0) != channels)
      throw ConfigError("batch_norm2d: per-channel tensor of shape " + shape_str(t->shape()) + " for " +
                        std::to_string(channels) + " channels");
  if (options.training && count < 2)
    throw DegenerateBatchError("batch_norm2d: train mode needs at least 2 values per channel, got " +
                               std::to_string(count));

  Tensor out = Tensor::zeros(input.shape(), input.dtype());
  // Saved for backward: normalised input and 1/sqrt(var + eps) per channel.
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(input.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(channels));

  dispatch(input.dtype(), [&]<typename T>() {
    auto x = input.data<T>();
    auto y = out.data<T>();
    auto g = gamma.data<T>();
    auto bt = beta.data<T>();
    auto rm = running.mean.data<T>();
    auto rv = running.var.data<T>();
    for (std::int64_t c = 0; c < channels; ++c) {
      double mean = 0.0, var = 0.0;
      if (options.training) {
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = x.data() + (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
        }
        mean /= static_cast<double>(count);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = x.data() + (b * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<double>(count);
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        rm[c] = static_cast<T>((1.0 - options.momentum) * rm[c] + options.momentum * mean);
        rv[c] = static_cast<T>((1.0 - options.momentum) * rv[c] + options.momentum * unbiased);
      } else {
        mean = rm[c];
        var = rv[c];
      }
      const double is = 1.0 / std::sqrt(var + options.epsilon);
      (*inv_std)[c] = is;
      for (std::int64_t b = 0; b < batch; ++b) {
        const std::int64_t base = (b * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double h = (x[base + i] - mean) * is;
          (*xhat)[base + i] = h;
          y[base + i] = static_cast<T>(g[c] * h + bt[c]);
        }
      }
    }
  });

  const bool training = options.training;
  record(out, "batch_norm2d", {input, gamma, beta},
         [input, gamma, beta, xhat, inv_std, training, batch, channels, plane, count](const Tensor& o) {
           dispatch(o.dtype(), [&]<typename T>() {
             auto dy = o.grad<T>();
             auto g = gamma.data<T>();
             T* dx = input.requires_grad() ? input.grad_accumulator<T>().data() : nullptr;
             T* dg = gamma.requires_grad() ? gamma.grad_accumulator<T>().data() : nullptr;
             T* db = beta.requires_grad() ? beta.grad_accumulator<T>().data() : nullptr;
             for (std::int64_t c = 0; c < channels; ++c) {
               double sum_dy = 0.0, sum_dy_xhat = 0.0;
               for (std::int64_t b = 0; b < batch; ++b) {
                 const std::int64_t base = (b * channels + c) * plane;
                 for (std::int64_t i = 0; i < plane; ++i) {
                   sum_dy += dy[base + i];
                   sum_dy_xhat += dy[base + i] * (*xhat)[base + i];
                 }
               }
               if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
               if (db) db[c] += static_cast<T>(sum_dy);
               if (!dx) continue;
               const double scale = g[c] * (*inv_std)[c];
               const double n = static_cast<double>(count);
               for (std::int64_t b = 0; b < batch; ++b) {
                 const std::int64_t base = (b * channels + c) * plane;
                 for (std::int64_t i = 0; i < plane; ++i) {
                   double d = dy[base + i];
                   if (training) d -= (sum_dy + (*xhat)[base + i] * sum_dy_xhat) / n;
                   dx[base + i] += static_cast<T>(scale * d);
                 }
               }
             }
           });
         });
  return out;
}

}  // namespace mfnet
