#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfnet/random.hpp"

namespace mfnet {

/// 8-bit RGB frame, planar (channel, row, column). Value v maps to v / 255.
struct Frame {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Frame() = default;
  Frame(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(kChannels) * h * w, 0) {}

  std::uint8_t& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::uint8_t at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double value(int c, int y, int x) const { return at(c, y, x) / 255.0; }

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Float image, planar, values in [0, 1].
struct ImageF {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

/// A clip: ordered frames plus class label. Frames are either held in memory
/// or decoded from files on access.
class VideoSample {
 public:
  static VideoSample in_memory(std::string id, int label, std::vector<Frame> frames);
  static VideoSample from_files(std::string id, int label, std::vector<std::filesystem::path> files, int height,
                                int width);

  const std::string& id() const { return id_; }
  int label() const { return label_; }
  int num_frames() const;
  int height() const { return height_; }
  int width() const { return width_; }
  Frame frame(int index) const;
  bool is_lazy() const { return frames_.empty(); }

 private:
  std::string id_;
  int label_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<Frame> frames_;
  std::vector<std::filesystem::path> files_;
};

using Dataset = std::vector<VideoSample>;

// ---------------------------------------------------------------------------
// Synthetic symmetric-gesture clips

/// Class order: swipe_left, swipe_right, swipe_up, swipe_down, grow, shrink.
/// Classes 2p and 2p+1 are time reversals of each other.
const std::vector<std::string>& synthetic_class_names();

/// Partner class under frame-order reversal.
int paired_class(int label);

struct SyntheticSpec {
  int height = 64;
  int width = 64;
  int num_frames = 16;
  double noise_std = 0.02;
  std::uint64_t seed = 0;
};

/// One bright square on a dark background. Positions and sizes are in pixels.
struct SquareProgram {
  double cx = 0, cy = 0;
  double size = 0;
  double vx = 0, vy = 0;
  double growth = 0;
  std::array<double, 3> color{};
  double background = 0;
};

/// Draws a program for the forward member of `pair` (0: left, 1: up, 2: grow)
/// that stays on the canvas. Colour channel `pair` is the brightest. Throws InputError after bounded retries.
SquareProgram draw_program(const SyntheticSpec& spec, int pair, Rng& rng);

/// Renders `label` from a program of its pair: even labels play the program
/// forward, odd labels play it reversed. No noise is added.
std::vector<Frame> render_clip(const SyntheticSpec& spec, int label, const SquareProgram& program);

/// Deterministic in (spec.seed, label, index).
VideoSample generate_clip(const SyntheticSpec& spec, int label, int index);

/// count_per_class clips of each class, class-major.
Dataset generate_synthetic(const SyntheticSpec& spec, int count_per_class);

struct DatasetSplit {
  Dataset train;
  Dataset val;
};

/// Per class, the round(n * val_fraction) clips with the smallest id hash go to val.
DatasetSplit split_by_id_hash(const Dataset& data, double val_fraction);

// ---------------------------------------------------------------------------
// Frame folders: <root>/<clip_id>/frame_%05d.ppm, labels.csv, classes.txt

void write_ppm(const std::filesystem::path& path, const Frame& frame);
Frame read_ppm(const std::filesystem::path& path);

void export_frame_folder(const Dataset& data, const std::vector<std::string>& class_names,
                         const std::filesystem::path& root);

struct IngestIssue {
  std::string clip_id;
  std::string message;
};

struct FrameFolder {
  Dataset samples;
  std::vector<std::string> class_names;
  std::vector<IngestIssue> errors;
};

/// Clips with problems are skipped and reported in `errors`; only headers are read here.
FrameFolder load_frame_folder(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
  std::vector<double> scales = {1.0, 0.875, 0.75, 0.625};
  int crop_height = 64;
  int crop_width = 64;
  bool horizontal_flip = false;

  /// Rejects flipping when the label set holds a left/right pair.
  void validate(const std::vector<std::string>& class_names) const;
};

/// Square crop taken from the source frame before resizing.
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
  bool flip = false;
};

/// Side = shorter side * scale (scale drawn from spec.scales), uniform position.
CropWindow draw_crop(int height, int width, const AugmentSpec& spec, Rng& rng);
/// Scale 1.0, centred, no flip.
CropWindow center_crop(int height, int width);
/// Bilinear resize of the window to out_h x out_w; values stay in [0, 1].
ImageF apply_crop(const Frame& frame, const CropWindow& window, int out_h, int out_w);

ImageF augment(const Frame& frame, const AugmentSpec& spec, Rng& rng);
ImageF augment_eval(const Frame& frame, const AugmentSpec& spec);

}  // namespace mfnet
