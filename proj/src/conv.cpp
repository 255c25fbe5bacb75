#include <algorithm>
#include <vector>

#include "gemm.hpp"
#include "mfnet/ops.hpp"

namespace mfnet {

namespace {

struct ConvGeometry {
  std::int64_t batch, in_channels, height, width;
  std::int64_t out_channels, kh, kw;
  std::int64_t out_h, out_w;
  int stride, padding;

  std::int64_t col_rows() const { return in_channels * kh * kw; }
  std::int64_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Output columns [lo, hi) whose input column ox*stride - padding + kx is inside the image.
inline std::pair<std::int64_t, std::int64_t> valid_columns(const ConvGeometry& g, std::int64_t kx) {
  const std::int64_t off = kx - g.padding;
  std::int64_t lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  std::int64_t hi = g.width - off <= 0 ? 0 : (g.width - off - 1) / g.stride + 1;
  lo = std::min(lo, g.out_w);
  hi = std::clamp(hi, lo, g.out_w);
  return {lo, hi};
}

template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.width;
          const std::int64_t off = kx - g.padding;
          const auto [lo, hi] = valid_columns(g, kx);
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride + off];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = plane + iy * g.width;
          const T* src = row + oy * g.out_w;
          const std::int64_t off = kx - g.padding;
          const auto [lo, hi] = valid_columns(g, kx);
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride + off] += src[ox];
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const T* x, const T* w, const T* bias, const ConvGeometry& g, T* y) {
  const std::int64_t in_size = g.in_channels * g.height * g.width;
  const std::int64_t out_size = g.out_channels * g.col_cols();
  const int m = static_cast<int>(g.out_channels);
  const int n = static_cast<int>(g.col_cols());
  const int k = static_cast<int>(g.col_rows());
#pragma omp parallel
  {
    std::vector<T> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
#pragma omp for schedule(static)
    for (std::int64_t b = 0; b < g.batch; ++b) {
      const T* src = x + b * in_size;
      if (!g.is_pointwise()) {
        im2col(src, g, col.data());
        src = col.data();
      }
      T* dst = y + b * out_size;
      detail::gemm(false, false, m, n, k, T(1), w, k, src, n, T(0), dst, n);
      if (bias) {
        for (std::int64_t o = 0; o < g.out_channels; ++o) {
          T* row = dst + o * n;
          for (int i = 0; i < n; ++i) row[i] += bias[o];
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const T* x, const T* w, const T* dy, const ConvGeometry& g, T* dx, T* dw, T* dbias) {
  const std::int64_t in_size = g.in_channels * g.height * g.width;
  const std::int64_t out_size = g.out_channels * g.col_cols();
  const int m = static_cast<int>(g.out_channels);
  const int n = static_cast<int>(g.col_cols());
  const int k = static_cast<int>(g.col_rows());
  const std::int64_t chunks = (g.batch + detail::kBatchChunk - 1) / detail::kBatchChunk;
  const std::size_t wsize = static_cast<std::size_t>(m) * k;

  std::vector<T> dw_parts(dw ? static_cast<std::size_t>(chunks) * wsize : 0, T(0));
  std::vector<T> db_parts(dbias ? static_cast<std::size_t>(chunks * m) : 0, T(0));

#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    std::vector<T> dcol(dx && !g.is_pointwise() ? col.size() : 0);
#pragma omp for schedule(static)
    for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
      const std::int64_t b_end = std::min(g.batch, (chunk + 1) * detail::kBatchChunk);
      for (std::int64_t b = chunk * detail::kBatchChunk; b < b_end; ++b) {
        const T* gy = dy + b * out_size;
        if (dw) {
          const T* src = x + b * in_size;
          if (!g.is_pointwise()) {
            im2col(src, g, col.data());
            src = col.data();
          }
          detail::gemm(false, true, m, k, n, T(1), gy, n, src, n, T(1), dw_parts.data() + chunk * wsize, k);
        }
        if (dbias) {
          T* db = db_parts.data() + chunk * m;
          for (int o = 0; o < m; ++o) {
            T s = 0;
            for (int i = 0; i < n; ++i) s += gy[o * n + i];
            db[o] += s;
          }
        }
        if (dx) {
          T* gx = dx + b * in_size;
          if (g.is_pointwise()) {
            detail::gemm(true, false, k, n, m, T(1), w, k, gy, n, T(1), gx, n);
          } else {
            detail::gemm(true, false, k, n, m, T(1), w, k, gy, n, T(0), dcol.data(), n);
            col2im_add(dcol.data(), g, gx);
          }
        }
      }
    }
  }
  for (std::int64_t chunk = 0; chunk < chunks; ++chunk) {
    if (dw)
      for (std::size_t i = 0; i < wsize; ++i) dw[i] += dw_parts[chunk * wsize + i];
    if (dbias)
      for (int o = 0; o < m; ++o) dbias[o] += db_parts[chunk * m + o];
  }
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t input, int kernel, int stride, int padding) {
  const std::int64_t span = input + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
  if (input.ndim() != 4 || weight.ndim() != 4)
    throw ConfigError("conv2d expects 4D input and weight, got " + shape_str(input.shape()) + " and " +
                      shape_str(weight.shape()));
  if (input.dim(1) != weight.dim(1))
    throw ConfigError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
                      std::to_string(weight.dim(1)));
  if (input.dtype() != weight.dtype()) throw ConfigError("conv2d: dtype mismatch");
  if (options.stride < 1 || options.padding < 0) throw ConfigError("conv2d: invalid stride/padding");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0)))
    throw ConfigError("conv2d: bias shape " + shape_str(bias.shape()));

  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = options.stride;
  g.padding = options.padding;
  g.out_h = conv_output_extent(g.height, static_cast<int>(g.kh), g.stride, g.padding);
  g.out_w = conv_output_extent(g.width, static_cast<int>(g.kw), g.stride, g.padding);
  if (g.out_h < 1 || g.out_w < 1)
    throw ConfigError("conv2d: kernel " + shape_str(weight.shape()) + " does not fit input " +
                      shape_str(input.shape()));

  Tensor out = Tensor::zeros({g.batch, g.out_channels, g.out_h, g.out_w}, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    conv_forward<T>(input.data<T>().data(), weight.data<T>().data(),
                    bias.defined() ? bias.data<T>().data() : nullptr, g, out.data<T>().data());
  });

  record(out, "conv2d", {input, weight, bias}, [input, weight, bias, g](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      T* dx = input.requires_grad() ? input.grad_accumulator<T>().data() : nullptr;
      T* dw = weight.requires_grad() ? weight.grad_accumulator<T>().data() : nullptr;
      T* db = bias.defined() && bias.requires_grad() ? bias.grad_accumulator<T>().data() : nullptr;
      conv_backward<T>(input.data<T>().data(), weight.data<T>().data(), o.grad<T>().data(), g, dx, dw, db);
    });
  });
  return out;
}

}  // namespace mfnet
