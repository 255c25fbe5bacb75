#pragma once

// Straightforward reference implementations used as test oracles. Nothing
// here shares code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mfnet/tensor.hpp"

namespace oracle {

struct Dims4 {
  std::int64_t n, c, h, w;
};

inline Dims4 dims(const mfnet::Tensor& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

/// Direct seven-loop convolution in double precision.
inline std::vector<double> conv2d(const std::vector<double>& x, Dims4 xd, const std::vector<double>& w, Dims4 wd,
                                  const std::vector<double>* bias, int stride, int pad, std::int64_t& oh,
                                  std::int64_t& ow) {
  oh = (xd.h + 2 * pad - wd.h) / stride + 1;
  ow = (xd.w + 2 * pad - wd.w) / stride + 1;
  std::vector<double> y(static_cast<std::size_t>(xd.n * wd.n * oh * ow), 0.0);
  for (std::int64_t b = 0; b < xd.n; ++b)
    for (std::int64_t o = 0; o < wd.n; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
          for (std::int64_t c = 0; c < xd.c; ++c)
            for (std::int64_t ky = 0; ky < wd.h; ++ky)
              for (std::int64_t kx = 0; kx < wd.w; ++kx) {
                const std::int64_t y_in = i * stride - pad + ky, x_in = j * stride - pad + kx;
                if (y_in < 0 || y_in >= xd.h || x_in < 0 || x_in >= xd.w) continue;
                acc += x[static_cast<std::size_t>(((b * xd.c + c) * xd.h + y_in) * xd.w + x_in)] *
                       w[static_cast<std::size_t>(((o * wd.c + c) * wd.h + ky) * wd.w + kx)];
              }
          y[static_cast<std::size_t>(((b * wd.n + o) * oh + i) * ow + j)] = acc;
        }
  return y;
}

/// Shift written as a depthwise 3x3 convolution (padding 1) whose kernel is
/// one-hot at (1 + dy, 1 + dx): out(y,x) = sum_k K(k) in(y - 1 + ky, x - 1 + kx).
inline std::vector<double> one_hot_depthwise_shift(const std::vector<double>& x, Dims4 d, int dx, int dy) {
  double kernel[3][3] = {};
  kernel[1 + dy][1 + dx] = 1.0;
  std::vector<double> y(x.size(), 0.0);
  for (std::int64_t b = 0; b < d.n; ++b)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t i = 0; i < d.h; ++i)
        for (std::int64_t j = 0; j < d.w; ++j) {
          double acc = 0.0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const std::int64_t yi = i - 1 + ky, xj = j - 1 + kx;
              if (yi < 0 || yi >= d.h || xj < 0 || xj >= d.w) continue;
              acc += kernel[ky][kx] * x[static_cast<std::size_t>(((b * d.c + c) * d.h + yi) * d.w + xj)];
            }
          y[static_cast<std::size_t>(((b * d.c + c) * d.h + i) * d.w + j)] = acc;
        }
  return y;
}

/// Per-channel mean and biased variance by the two-pass formula.
inline void channel_stats(const std::vector<double>& x, Dims4 d, std::vector<double>& mean, std::vector<double>& var) {
  mean.assign(static_cast<std::size_t>(d.c), 0.0);
  var.assign(static_cast<std::size_t>(d.c), 0.0);
  const double count = static_cast<double>(d.n * d.h * d.w);
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t b = 0; b < d.n; ++b)
      for (std::int64_t i = 0; i < d.h * d.w; ++i) mean[c] += x[static_cast<std::size_t>((b * d.c + c) * d.h * d.w + i)];
    mean[c] /= count;
    for (std::int64_t b = 0; b < d.n; ++b)
      for (std::int64_t i = 0; i < d.h * d.w; ++i) {
        const double e = x[static_cast<std::size_t>((b * d.c + c) * d.h * d.w + i)] - mean[c];
        var[c] += e * e;
      }
    var[c] /= count;
  }
}

/// Central-difference gradient of a scalar function of a flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double plus = f(x);
    x[i] = orig - h;
    const double minus = f(x);
    x[i] = orig;
    g[i] = (plus - minus) / (2 * h);
  }
  return g;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

/// Critical KS distance at significance alpha for samples of size n and m.
inline double ks_critical(std::size_t n, std::size_t m, double alpha) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * m));
}

}  // namespace oracle
