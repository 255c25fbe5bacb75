#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gemm.hpp"
#include "mfnet/ops.hpp"

namespace mfnet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.dtype() != b.dtype()) throw ConfigError(std::string(op) + ": dtype mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  // Exact sum (no multiply by 1) so residual identities hold bitwise.
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  });
  record(out, "add", {a, b}, [a, b](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->grad_accumulator<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  });
  record(out, "sub", {a, b}, [a, b](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      if (a.requires_grad()) {
        auto ga = a.grad_accumulator<T>();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_accumulator<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(factor) * s[i];
  });
  record(out, "scale", {x}, [x, factor](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(factor) * g[i];
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  });
  record(out, "mul", {a, b}, [a, b](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      if (a.requires_grad()) {
        auto ga = a.grad_accumulator<T>();
        auto y = b.data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_accumulator<T>();
        auto x = a.data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    double s = 0.0;
    for (T v : x.data<T>()) s += v;
    out.data<T>()[0] = static_cast<T>(s);
  });
  record(out, "sum", {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      const T g = o.grad<T>()[0];
      for (auto& v : x.grad_accumulator<T>()) v += g;
    });
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = s[i] > T(0) ? s[i] : T(0);
  });
  record(out, "relu", {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto s = x.data<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (s[i] > T(0)) gx[i] += g[i];
    });
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  if (x.ndim() != 4) throw ConfigError("max_pool2d expects (B,C,H,W), got " + shape_str(x.shape()));
  if (kernel < 1 || stride < 1 || padding < 0 || padding > kernel / 2)
    throw ConfigError("max_pool2d: invalid kernel/stride/padding");
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = conv_output_extent(h, kernel, stride, padding);
  const std::int64_t ow = conv_output_extent(w, kernel, stride, padding);
  if (oh < 1 || ow < 1) throw ConfigError("max_pool2d: window does not fit " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1), oh, ow}, x.dtype());
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < kernel; ++ky) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const std::int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              const std::int64_t idx = (p * h + iy) * w + ix;
              if (best_idx < 0 || s[idx] > best) {
                best = s[idx];
                best_idx = idx;
              }
            }
          }
          const std::int64_t oidx = (p * oh + oy) * ow + ox;
          o[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }
      }
    }
  });
  record(out, "max_pool2d", {x}, [x, argmax](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    });
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ConfigError("global_avg_pool expects (B,C,H,W), got " + shape_str(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1)}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < area; ++i) acc += s[p * area + i];
      o[p] = static_cast<T>(acc / static_cast<double>(area));
    }
  });
  record(out, "global_avg_pool", {x}, [x, planes, area](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::int64_t p = 0; p < planes; ++p) {
        const T v = static_cast<T>(g[p] / static_cast<double>(area));
        for (std::int64_t i = 0; i < area; ++i) gx[p * area + i] += v;
      }
    });
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1))
    throw ConfigError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                      shape_str(weight.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0)))
    throw ConfigError("linear: bias shape " + shape_str(bias.shape()));
  const int batch = static_cast<int>(x.dim(0));
  const int in = static_cast<int>(x.dim(1));
  const int outf = static_cast<int>(weight.dim(0));
  Tensor out = Tensor::zeros({batch, outf}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    T* o = out.data<T>().data();
    detail::gemm(false, true, batch, outf, in, T(1), x.data<T>().data(), in, weight.data<T>().data(), in, T(0), o,
                 outf);
    if (bias.defined()) {
      auto b = bias.data<T>();
      for (int i = 0; i < batch; ++i)
        for (int j = 0; j < outf; ++j) o[i * outf + j] += b[j];
    }
  });
  record(out, "linear", {x, weight, bias}, [x, weight, bias, batch, in, outf](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      const T* g = o.grad<T>().data();
      if (x.requires_grad())
        detail::gemm(false, false, batch, in, outf, T(1), g, outf, weight.data<T>().data(), in, T(1),
                     x.grad_accumulator<T>().data(), in);
      if (weight.requires_grad())
        detail::gemm(true, false, outf, in, batch, T(1), g, outf, x.data<T>().data(), in, T(1),
                     weight.grad_accumulator<T>().data(), in);
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad_accumulator<T>();
        for (int i = 0; i < batch; ++i)
          for (int j = 0; j < outf; ++j) gb[j] += g[i * outf + j];
      }
    });
  });
  return out;
}

Tensor dropout(const Tensor& x, double keep_probability, bool training, Rng& rng) {
  if (!(keep_probability > 0.0 && keep_probability <= 1.0))
    throw ConfigError("dropout: keep probability must lie in (0, 1]");
  if (!training || keep_probability == 1.0) return x;
  auto mask = std::make_shared<std::vector<unsigned char>>(static_cast<std::size_t>(x.numel()));
  for (auto& m : *mask) m = rng.bernoulli(keep_probability) ? 1 : 0;
  const double inv_keep = 1.0 / keep_probability;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = (*mask)[i] ? static_cast<T>(s[i] * inv_keep) : T(0);
  });
  record(out, "dropout", {x}, [x, mask, inv_keep](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t i = 0; i < g.size(); ++i)
        if ((*mask)[i]) gx[i] += static_cast<T>(g[i] * inv_keep);
    });
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  if (first.ndim() != 4) throw ConfigError("concat_channels expects 4D tensors");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 4 || p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3))
      throw ConfigError("concat_channels: non-channel extents differ: " + shape_str(first.shape()) + " vs " +
                        shape_str(p.shape()));
    if (p.dtype() != first.dtype()) throw ConfigError("concat_channels: dtype mismatch");
    channels += p.dim(1);
  }
  const std::int64_t batch = first.dim(0), plane = first.dim(2) * first.dim(3);
  Tensor out = Tensor::zeros({batch, channels, first.dim(2), first.dim(3)}, first.dtype());
  dispatch(first.dtype(), [&]<typename T>() {
    auto o = out.data<T>();
    for (std::int64_t b = 0; b < batch; ++b) {
      std::int64_t offset = 0;
      for (const auto& p : parts) {
        const std::int64_t n = p.dim(1) * plane;
        auto s = p.data<T>();
        std::copy_n(s.begin() + b * n, n, o.begin() + (b * channels * plane + offset));
        offset += n;
      }
    }
  });
  record(out, "concat_channels", parts, [parts, batch, channels, plane](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      std::int64_t offset = 0;
      for (const auto& p : parts) {
        const std::int64_t n = p.dim(1) * plane;
        if (p.requires_grad()) {
          auto gp = p.grad_accumulator<T>();
          for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t i = 0; i < n; ++i) gp[b * n + i] += g[b * channels * plane + offset + i];
        }
        offset += n;
      }
    });
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ConfigError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out = x.detach();
  out.impl_ptr()->shape = std::move(shape);
  record(out, "reshape", {x}, [x](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  return out;
}

Tensor mean_dim(const Tensor& x, int axis) {
  const int nd = static_cast<int>(x.ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw ConfigError("mean_dim: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= x.dim(i);
  const std::int64_t n = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t c = 0; c < inner; ++c) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < n; ++k) acc += s[(a * n + k) * inner + c];
        o[a * inner + c] = static_cast<T>(acc / static_cast<double>(n));
      }
  });
  record(out, "mean_dim", {x}, [x, outer, inner, n](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::int64_t a = 0; a < outer; ++a)
        for (std::int64_t c = 0; c < inner; ++c) {
          const T v = static_cast<T>(g[a * inner + c] / static_cast<double>(n));
          for (std::int64_t k = 0; k < n; ++k) gx[(a * n + k) * inner + c] += v;
        }
    });
  });
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> indices) {
  if (x.ndim() < 1 || indices.empty()) throw ConfigError("gather_rows: empty selection");
  const std::int64_t rows = x.dim(0), row = x.numel() / rows;
  for (auto i : indices)
    if (i < 0 || i >= rows) throw ConfigError("gather_rows: index out of range");
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(indices.size());
  Tensor out = Tensor::zeros(shape, x.dtype());
  auto idx = std::make_shared<std::vector<std::int64_t>>(indices.begin(), indices.end());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t r = 0; r < idx->size(); ++r)
      std::copy_n(s.begin() + (*idx)[r] * row, row, o.begin() + static_cast<std::int64_t>(r) * row);
  });
  record(out, "gather_rows", {x}, [x, idx, row](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t r = 0; r < idx->size(); ++r)
        for (std::int64_t i = 0; i < row; ++i) gx[(*idx)[r] * row + i] += g[static_cast<std::int64_t>(r) * row + i];
    });
  });
  return out;
}

Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> indices, std::int64_t rows) {
  if (x.ndim() < 1 || static_cast<std::int64_t>(indices.size()) != x.dim(0))
    throw ConfigError("scatter_rows: one index per input row required");
  const std::int64_t row = x.numel() / x.dim(0);
  for (auto i : indices)
    if (i < 0 || i >= rows) throw ConfigError("scatter_rows: index out of range");
  Shape shape = x.shape();
  shape[0] = rows;
  Tensor out = Tensor::zeros(shape, x.dtype());
  auto idx = std::make_shared<std::vector<std::int64_t>>(indices.begin(), indices.end());
  dispatch(x.dtype(), [&]<typename T>() {
    auto s = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::int64_t i = 0; i < row; ++i) o[(*idx)[r] * row + i] += s[static_cast<std::int64_t>(r) * row + i];
  });
  record(out, "scatter_rows", {x}, [x, idx, row](const Tensor& o) {
    if (!x.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      auto gx = x.grad_accumulator<T>();
      for (std::size_t r = 0; r < idx->size(); ++r)
        for (std::int64_t i = 0; i < row; ++i) gx[static_cast<std::int64_t>(r) * row + i] += g[(*idx)[r] * row + i];
    });
  });
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw ConfigError("softmax_cross_entropy expects (B, classes)");
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != batch)
    throw InputError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  for (int l : labels)
    if (l < 0 || l >= classes) throw InputError("softmax_cross_entropy: label " + std::to_string(l) + " out of range");

  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch * classes));
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  Tensor out = Tensor::zeros({1}, logits.dtype());
  dispatch(logits.dtype(), [&]<typename T>() {
    auto z = logits.data<T>();
    double loss = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
      const T* row = z.data() + b * classes;
      const double m = *std::max_element(row, row + classes);
      double denom = 0.0;
      for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - m);
      const double log_denom = std::log(denom);
      for (std::int64_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - m - log_denom);
      loss += -(row[(*lab)[b]] - m - log_denom);
    }
    out.data<T>()[0] = static_cast<T>(loss / static_cast<double>(batch));
  });
  record(out, "softmax_cross_entropy", {logits}, [logits, probs, lab, batch, classes](const Tensor& o) {
    if (!logits.requires_grad()) return;
    dispatch(o.dtype(), [&]<typename T>() {
      const double g = o.grad<T>()[0] / static_cast<double>(batch);
      auto gz = logits.grad_accumulator<T>();
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < classes; ++c) {
          const double onehot = (c == (*lab)[b]) ? 1.0 : 0.0;
          gz[b * classes + c] += static_cast<T>(g * ((*probs)[b * classes + c] - onehot));
        }
    });
  });
  return out;
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw ConfigError("softmax_rows expects (B, classes)");
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(batch), std::vector<double>(classes));
  const auto z = logits.to_vector();
  for (std::int64_t b = 0; b < batch; ++b) {
    const double m = *std::max_element(z.begin() + b * classes, z.begin() + (b + 1) * classes);
    double denom = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(z[b * classes + c] - m);
    for (std::int64_t c = 0; c < classes; ++c) out[b][c] = std::exp(z[b * classes + c] - m) / denom;
  }
  return out;
}

}  // namespace mfnet
