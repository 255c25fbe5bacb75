#include "mfnet/motion.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <sstream>

namespace mfnet {

Displacement::Displacement(int dx, int dy) : dx_(dx), dy_(dy) {
  if (std::abs(dx) > 1 || std::abs(dy) > 1 || std::abs(dx) + std::abs(dy) > 1)
    throw ConfigError("displacement (" + std::to_string(dx) + "," + std::to_string(dy) +
                      ") violates |dx|+|dy| <= 1 with dx,dy in {-1,0,1}");
}

DirectionSet::DirectionSet(std::vector<Displacement> dirs) : dirs_(std::move(dirs)) {
  if (dirs_.empty()) throw ConfigError("direction set must be non-empty");
  for (std::size_t i = 0; i < dirs_.size(); ++i)
    for (std::size_t j = i + 1; j < dirs_.size(); ++j)
      if (dirs_[i] == dirs_[j]) throw ConfigError("direction set contains a duplicate displacement");
}

DirectionSet DirectionSet::standard() { return DirectionSet({{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}); }

DirectionSet DirectionSet::parse(std::string_view text) {
  std::vector<Displacement> dirs;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, end - pos);
    const std::size_t colon = item.find(':');
    int dx = 0, dy = 0;
    const auto parse_int = [&](std::string_view s, int& v) {
      const auto* first = s.data();
      if (!s.empty() && s.front() == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
      return ec == std::errc() && ptr == s.data() + s.size();
    };
    if (colon == std::string_view::npos || !parse_int(item.substr(0, colon), dx) ||
        !parse_int(item.substr(colon + 1), dy))
      throw ConfigError("cannot parse displacement '" + std::string(item) + "' (expected dx:dy)");
    dirs.emplace_back(dx, dy);
    pos = end + 1;
  }
  return DirectionSet(std::move(dirs));
}

std::string DirectionSet::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < dirs_.size(); ++i) os << (i ? "," : "") << dirs_[i].dx() << ':' << dirs_[i].dy();
  return os.str();
}

namespace {

// dst(y,x) += src(y+dy, x+dx) over every plane, skipping out-of-range reads.
template <typename T>
void shift_accumulate(const T* src, T* dst, std::int64_t planes, std::int64_t h, std::int64_t w, int dx, int dy) {
  const std::int64_t y0 = std::max<std::int64_t>(0, -dy), y1 = std::min<std::int64_t>(h, h - dy);
  const std::int64_t x0 = std::max<std::int64_t>(0, -dx), x1 = std::min<std::int64_t>(w, w - dx);
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* s = src + p * h * w;
    T* d = dst + p * h * w;
    for (std::int64_t y = y0; y < y1; ++y)
      for (std::int64_t x = x0; x < x1; ++x) d[y * w + x] += s[(y + dy) * w + (x + dx)];
  }
}

void require_4d(const Tensor& t, const char* op) {
  if (t.ndim() != 4) throw ConfigError(std::string(op) + " expects (B,C,H,W), got " + shape_str(t.shape()));
}

}  // namespace

Tensor shift(const Tensor& input, Displacement delta) {
  require_4d(input, "shift");
  const std::int64_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros(input.shape(), input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    shift_accumulate(input.data<T>().data(), out.data<T>().data(), planes, h, w, delta.dx(), delta.dy());
  });
  record(out, "shift", {input}, [input, delta, planes, h, w](const Tensor& o) {
    if (!input.requires_grad()) return;
    const Displacement back = delta.inverse();
    dispatch(o.dtype(), [&]<typename T>() {
      shift_accumulate(o.grad<T>().data(), input.grad_accumulator<T>().data(), planes, h, w, back.dx(), back.dy());
    });
  });
  return out;
}

Tensor motion_filter(const Tensor& f_t, const Tensor& f_next, const DirectionSet& dirs) {
  require_4d(f_t, "motion_filter");
  if (f_t.shape() != f_next.shape() || f_t.dtype() != f_next.dtype())
    throw ConfigError("motion_filter: feature maps differ: " + shape_str(f_t.shape()) + " vs " +
                      shape_str(f_next.shape()));
  const std::int64_t batch = f_t.dim(0), channels = f_t.dim(1), h = f_t.dim(2), w = f_t.dim(3);
  const std::int64_t block = channels * h * w;
  const auto directions = static_cast<std::int64_t>(dirs.size());
  Tensor out = Tensor::zeros({batch, directions * channels, h, w}, f_t.dtype());
  dispatch(f_t.dtype(), [&]<typename T>() {
    auto a = f_t.data<T>();
    auto n = f_next.data<T>();
    auto o = out.data<T>();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t s = 0; s < directions; ++s) {
        T* dst = o.data() + (b * directions + s) * block;
        // -shift(f_next), then + f_t
        shift_accumulate(n.data() + b * block, dst, channels, h, w, dirs[s].dx(), dirs[s].dy());
        const T* src = a.data() + b * block;
        for (std::int64_t i = 0; i < block; ++i) dst[i] = src[i] - dst[i];
      }
    }
  });
  record(out, "motion_filter", {f_t, f_next}, [f_t, f_next, dirs, batch, channels, h, w, block](const Tensor& o) {
    dispatch(o.dtype(), [&]<typename T>() {
      auto g = o.grad<T>();
      const auto directions = static_cast<std::int64_t>(dirs.size());
      if (f_t.requires_grad()) {
        auto ga = f_t.grad_accumulator<T>();
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t s = 0; s < directions; ++s) {
            const T* src = g.data() + (b * directions + s) * block;
            T* dst = ga.data() + b * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
      }
      if (f_next.requires_grad()) {
        auto gn = f_next.grad_accumulator<T>();
        std::vector<T> tmp(static_cast<std::size_t>(block));
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t s = 0; s < directions; ++s) {
            std::fill(tmp.begin(), tmp.end(), T(0));
            const Displacement back = dirs[s].inverse();
            shift_accumulate(g.data() + (b * directions + s) * block, tmp.data(), channels, h, w, back.dx(), back.dy());
            T* dst = gn.data() + b * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] -= tmp[i];
          }
      }
    });
  });
  return out;
}

std::string_view fusion_name(FusionVariant variant) { return variant == FusionVariant::Sum ? "sum" : "concat"; }

std::int64_t MotionBlockSpec::reduced_channels() const {
  return std::max<std::int64_t>(1, in_channels / reduction_factor);
}

std::int64_t MotionBlockSpec::motion_channels() const {
  return static_cast<std::int64_t>(directions.size()) * reduced_channels();
}

std::int64_t MotionBlockSpec::fusion_in_channels() const {
  return variant == FusionVariant::Sum ? motion_channels() : in_channels + motion_channels();
}

std::int64_t MotionBlockSpec::parameter_count() const {
  const std::int64_t cr = reduced_channels();
  return in_channels * cr + 2 * cr + fusion_in_channels() * in_channels + 2 * in_channels;
}

void MotionBlockSpec::validate() const {
  if (reduction_factor < 1) throw ConfigError("motion reduction factor must be >= 1");
  if (in_channels < 1) throw ConfigError("motion block needs at least one input channel");
}

MotionBlock::MotionBlock(LayerContext& ctx, const std::string& name, MotionBlockSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::int64_t c = spec_.in_channels, cr = spec_.reduced_channels();
  reduce_conv_ = Conv2d(ctx, name + ".reduce", c, cr, 1, {}, false);
  reduce_bn_ = BatchNorm2d(ctx, name + ".reduce_bn", cr);
  compress_conv_ = Conv2d(ctx, name + ".compress", spec_.fusion_in_channels(), c, 1, {}, false);
  compress_bn_ = BatchNorm2d(ctx, name + ".compress_bn", c);
}

Tensor MotionBlock::reduce(const Tensor& x, bool training) const {
  if (x.ndim() != 4 || x.dim(1) != spec_.in_channels)
    throw ConfigError("motion block expects " + std::to_string(spec_.in_channels) + " channels, got " +
                      shape_str(x.shape()));
  return reduce_bn_(reduce_conv_(x), training);
}

Tensor MotionBlock::fuse(const Tensor& f, const Tensor& motion, bool training) const {
  if (spec_.variant == FusionVariant::Sum) return add(f, compress_bn_(compress_conv_(motion), training));
  return compress_bn_(compress_conv_(concat_channels({f, motion})), training);
}

Tensor MotionBlock::forward_pair(const Tensor& f_t, const Tensor& f_next, bool training) const {
  if (f_t.shape() != f_next.shape())
    throw ConfigError("motion block pair shapes differ: " + shape_str(f_t.shape()) + " vs " +
                      shape_str(f_next.shape()));
  const std::int64_t batch = f_t.dim(0);
  std::vector<std::int64_t> even(static_cast<std::size_t>(batch)), odd(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    even[b] = 2 * b;
    odd[b] = 2 * b + 1;
  }
  // Both inputs share one reduce pass so its batch statistics cover the pair.
  const Tensor both = add(scatter_rows(f_t, even, 2 * batch), scatter_rows(f_next, odd, 2 * batch));
  const Tensor reduced = reduce(both, training);
  const Tensor motion = motion_filter(gather_rows(reduced, even), gather_rows(reduced, odd), spec_.directions);
  return fuse(f_t, motion, training);
}

Tensor MotionBlock::forward_snippets(const Tensor& x, std::int64_t segments, bool training) const {
  if (segments < 2) throw ConfigError("motion blocks need at least 2 segments, got " + std::to_string(segments));
  if (x.ndim() != 4 || x.dim(0) % segments != 0)
    throw ConfigError("snippet batch " + shape_str(x.shape()) + " is not a multiple of " + std::to_string(segments));
  const std::int64_t rows = x.dim(0), clips = rows / segments;
  std::vector<std::int64_t> current, next;
  current.reserve(static_cast<std::size_t>(clips * (segments - 1)));
  for (std::int64_t b = 0; b < clips; ++b)
    for (std::int64_t k = 0; k + 1 < segments; ++k) {
      current.push_back(b * segments + k);
      next.push_back(b * segments + k + 1);
    }
  const Tensor reduced = reduce(x, training);
  const Tensor pairs = motion_filter(gather_rows(reduced, current), gather_rows(reduced, next), spec_.directions);
  return fuse(x, scatter_rows(pairs, current, rows), training);
}

}  // namespace mfnet
