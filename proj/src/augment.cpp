#include <algorithm>
#include <cmath>

#include "mfnet/data.hpp"
#include "mfnet/error.hpp"

namespace mfnet {

void AugmentSpec::validate(const std::vector<std::string>& class_names) const {
  if (scales.empty()) throw ConfigError("augmentation needs at least one scale");
  for (double s : scales)
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("augmentation scales must lie in (0, 1]");
  if (crop_height < 1 || crop_width < 1) throw ConfigError("crop size must be positive");
  if (!horizontal_flip) return;
  for (const auto& name : class_names) {
    const auto pos = name.find("left");
    if (pos == std::string::npos) continue;
    std::string mirrored = name;
    mirrored.replace(pos, 4, "right");
    if (std::find(class_names.begin(), class_names.end(), mirrored) != class_names.end())
      throw ConfigError("horizontal flip would swap classes '" + name + "' and '" + mirrored + "'");
  }
}

CropWindow draw_crop(int height, int width, const AugmentSpec& spec, Rng& rng) {
  if (spec.scales.empty()) throw ConfigError("augmentation needs at least one scale");
  const double scale = spec.scales[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.scales.size()) - 1))];
  const int side = static_cast<int>(std::floor(std::min(height, width) * scale));
  if (side < 1) throw InputError("crop at scale " + std::to_string(scale) + " is empty for a " + std::to_string(width) + "x" + std::to_string(height) + " frame");
  CropWindow w;
  w.side = side;
  w.x0 = static_cast<int>(rng.uniform_int(0, width - side));
  w.y0 = static_cast<int>(rng.uniform_int(0, height - side));
  w.flip = spec.horizontal_flip && rng.bernoulli(0.5);
  return w;
}

CropWindow center_crop(int height, int width) {
  const int side = std::min(height, width);
  return {(width - side) / 2, (height - side) / 2, side, false};
}

namespace {

struct Tap {
  int i0, i1;
  double frac;
};

// Half-pixel-centred sampling positions of `out` output pixels over [start, start + side).
std::vector<Tap> taps(int start, int side, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(side) / out;
  for (int o = 0; o < out; ++o) {
    const double s = std::clamp(start + (o + 0.5) * ratio - 0.5, static_cast<double>(start), static_cast<double>(start + side - 1));
    const int i0 = static_cast<int>(std::floor(s));
    t[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, start + side - 1), s - i0};
  }
  return t;
}

}  // namespace

ImageF apply_crop(const Frame& frame, const CropWindow& window, int out_h, int out_w) {
  if (window.side < 1 || window.x0 < 0 || window.y0 < 0 || window.x0 + window.side > frame.width ||
      window.y0 + window.side > frame.height)
    throw InputError("crop window does not fit the frame");
  const auto ty = taps(window.y0, window.side, out_h);
  const auto tx = taps(window.x0, window.side, out_w);
  ImageF img{Frame::kChannels, out_h, out_w, std::vector<float>(static_cast<std::size_t>(Frame::kChannels) * out_h * out_w)};
  for (int c = 0; c < Frame::kChannels; ++c)
    for (int y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(window.flip ? out_w - 1 - x : x)];
        const double top = frame.value(c, a.i0, b.i0) + (frame.value(c, a.i0, b.i1) - frame.value(c, a.i0, b.i0)) * b.frac;
        const double bot = frame.value(c, a.i1, b.i0) + (frame.value(c, a.i1, b.i1) - frame.value(c, a.i1, b.i0)) * b.frac;
        img.values[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] = static_cast<float>(top + (bot - top) * a.frac);
      }
    }
  return img;
}

ImageF augment(const Frame& frame, const AugmentSpec& spec, Rng& rng) {
  return apply_crop(frame, draw_crop(frame.height, frame.width, spec, rng), spec.crop_height, spec.crop_width);
}

ImageF augment_eval(const Frame& frame, const AugmentSpec& spec) {
  return apply_crop(frame, center_crop(frame.height, frame.width), spec.crop_height, spec.crop_width);
}

}  // namespace mfnet
