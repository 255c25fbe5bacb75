#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "mfnet/data.hpp"
#include "mfnet/error.hpp"

namespace mfnet {

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"swipe_left", "swipe_right", "swipe_up", "swipe_down", "grow", "shrink"};
  return names;
}

int paired_class(int label) {
  if (label < 0) throw InputError("negative class index");
  return label ^ 1;
}

namespace {

constexpr int kMaxPlacementTries = 1000;

struct Box {
  double cx, cy, size;
};

Box box_at(const SquareProgram& p, int t) {
  return {p.cx + p.vx * t, p.cy + p.vy * t, p.size + p.growth * t};
}

bool fits(const SyntheticSpec& spec, const SquareProgram& p) {
  for (int t : {0, spec.num_frames - 1}) {
    const Box b = box_at(p, t);
    const double half = b.size / 2;
    if (b.size <= 0 || b.cx - half < 0 || b.cy - half < 0 || b.cx + half > spec.width || b.cy + half > spec.height)
      return false;
  }
  return true;
}

// Length of [a0,a1) overlapping [b0,b1).
double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

Frame render_frame(const SyntheticSpec& spec, const SquareProgram& p, int t) {
  Frame f(spec.height, spec.width);
  const Box b = box_at(p, t);
  const double x0 = b.cx - b.size / 2, x1 = b.cx + b.size / 2;
  const double y0 = b.cy - b.size / 2, y1 = b.cy + b.size / 2;
  for (int y = 0; y < spec.height; ++y) {
    const double cy = overlap(y, y + 1, y0, y1);
    for (int x = 0; x < spec.width; ++x) {
      const double coverage = cy * overlap(x, x + 1, x0, x1);
      for (int c = 0; c < Frame::kChannels; ++c) {
        const double v = p.background + (p.color[c] - p.background) * coverage;
        f.at(c, y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return f;
}

}  // namespace

SquareProgram draw_program(const SyntheticSpec& spec, int pair, Rng& rng) {
  if (pair < 0 || pair > 2) throw InputError("synthetic pair index must be 0, 1 or 2");
  if (spec.num_frames < 1 || spec.height < 8 || spec.width < 8) throw InputError("synthetic canvas too small");
  // Motion magnitudes are defined on a 64-pixel canvas and scaled with it.
  const double unit = std::min(spec.height, spec.width) / 64.0;
  for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
    SquareProgram p;
    p.background = rng.uniform(0.0, 0.2);
    // Channel `pair` dominates, so any single frame identifies the pair but not its member.
    for (int c = 0; c < Frame::kChannels; ++c) p.color[c] = c == pair ? rng.uniform(0.8, 1.0) : rng.uniform(0.3, 0.55);
    p.cx = rng.uniform(0.0, spec.width);
    p.cy = rng.uniform(0.0, spec.height);
    const double speed = rng.uniform(1.5, 2.5) * unit;
    switch (pair) {
      case 0:
        p.size = rng.uniform(10.0, 16.0) * unit;
        p.vx = -speed;
        break;
      case 1:
        p.size = rng.uniform(10.0, 16.0) * unit;
        p.vy = -speed;
        break;
      default:
        p.size = rng.uniform(6.0, 12.0) * unit;
        p.growth = rng.uniform(1.0, 2.0) * unit;
        break;
    }
    if (fits(spec, p)) return p;
  }
  throw InputError("could not place a synthetic square on a " + std::to_string(spec.width) + "x" +
                   std::to_string(spec.height) + " canvas for " + std::to_string(spec.num_frames) + " frames");
}

std::vector<Frame> render_clip(const SyntheticSpec& spec, int label, const SquareProgram& program) {
  std::vector<Frame> frames;
  frames.reserve(static_cast<std::size_t>(spec.num_frames));
  for (int t = 0; t < spec.num_frames; ++t) frames.push_back(render_frame(spec, program, t));
  if (label % 2 == 1) std::reverse(frames.begin(), frames.end());
  return frames;
}

VideoSample generate_clip(const SyntheticSpec& spec, int label, int index) {
  const auto& names = synthetic_class_names();
  if (label < 0 || label >= static_cast<int>(names.size())) throw InputError("synthetic label out of range");
  Rng program_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index), 0}));
  const SquareProgram program = draw_program(spec, label / 2, program_rng);
  std::vector<Frame> frames = render_clip(spec, label, program);
  if (spec.noise_std > 0) {
    Rng noise_rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index), 1}));
    for (auto& f : frames)
      for (auto& v : f.pixels) {
        const double noisy = v / 255.0 + noise_rng.normal(0.0, spec.noise_std);
        v = static_cast<std::uint8_t>(std::lround(std::clamp(noisy, 0.0, 1.0) * 255.0));
      }
  }
  char id[64];
  std::snprintf(id, sizeof id, "%s_%05d", names[static_cast<std::size_t>(label)].c_str(), index);
  return VideoSample::in_memory(id, label, std::move(frames));
}

Dataset generate_synthetic(const SyntheticSpec& spec, int count_per_class) {
  if (count_per_class < 1) throw InputError("count per class must be >= 1");
  Dataset data;
  const int classes = static_cast<int>(synthetic_class_names().size());
  data.reserve(static_cast<std::size_t>(classes) * count_per_class);
  for (int label = 0; label < classes; ++label)
    for (int i = 0; i < count_per_class; ++i) data.push_back(generate_clip(spec, label, i));
  return data;
}

DatasetSplit split_by_id_hash(const Dataset& data, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw InputError("validation fraction must lie in [0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label()].push_back(i);
  std::vector<bool> is_val(data.size(), false);
  for (auto& [label, members] : by_class) {
    std::vector<std::size_t> ranked = members;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return fnv1a64(data[a].id()) < fnv1a64(data[b].id()); });
    const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(members.size()) * val_fraction));
    for (std::size_t i = 0; i < n_val; ++i) is_val[ranked[i]] = true;
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < data.size(); ++i) (is_val[i] ? split.val : split.train).push_back(data[i]);
  return split;
}

}  // namespace mfnet
