#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mfnet/nn.hpp"

namespace mfnet {

/// One-pixel displacement with dx, dy in {-1, 0, 1} and |dx| + |dy| <= 1.
class Displacement {
 public:
  constexpr Displacement() = default;
  Displacement(int dx, int dy);

  int dx() const { return dx_; }
  int dy() const { return dy_; }
  Displacement inverse() const { return {-dx_, -dy_}; }

  friend bool operator==(const Displacement&, const Displacement&) = default;

 private:
  int dx_ = 0;
  int dy_ = 0;
};

/// Ordered set of displacements; order fixes the channel layout of motion features.
class DirectionSet {
 public:
  explicit DirectionSet(std::vector<Displacement> dirs);

  /// (0,0), (1,0), (-1,0), (0,1), (0,-1)
  static DirectionSet standard();
  /// Parses "dx:dy,dx:dy,..." as written by to_string().
  static DirectionSet parse(std::string_view text);
  std::string to_string() const;

  const std::vector<Displacement>& dirs() const { return dirs_; }
  std::size_t size() const { return dirs_.size(); }
  const Displacement& operator[](std::size_t i) const { return dirs_[i]; }

  friend bool operator==(const DirectionSet&, const DirectionSet&) = default;

 private:
  std::vector<Displacement> dirs_;
};

/// output(b,c,y,x) = input(b,c,y+dy,x+dx), zero outside the input.
Tensor shift(const Tensor& input, Displacement delta);

/// Channel concatenation over the direction set of f_t - shift(f_next, delta).
Tensor motion_filter(const Tensor& f_t, const Tensor& f_next, const DirectionSet& dirs);

enum class FusionVariant { Sum, Concat };

std::string_view fusion_name(FusionVariant variant);

struct MotionBlockSpec {
  FusionVariant variant = FusionVariant::Concat;
  int reduction_factor = 16;
  DirectionSet directions = DirectionSet::standard();
  std::int64_t in_channels = 16;

  /// max(1, C / reduction_factor)
  std::int64_t reduced_channels() const;
  /// S * reduced channels.
  std::int64_t motion_channels() const;
  /// Input width of the compression conv: S*Cr (Sum) or C + S*Cr (Concat).
  std::int64_t fusion_in_channels() const;
  /// Trainable scalars the block adds (convs without bias, two batch-norms).
  std::int64_t parameter_count() const;
  void validate() const;
};

/// Reduce (1x1 conv + BN) -> motion filter -> fuse (Sum or Concat, 1x1 conv + BN).
class MotionBlock {
 public:
  MotionBlock() = default;
  MotionBlock(LayerContext& ctx, const std::string& name, MotionBlockSpec spec);

  const MotionBlockSpec& spec() const { return spec_; }

  /// Two snippets of the same stage; output has f_t's shape.
  Tensor forward_pair(const Tensor& f_t, const Tensor& f_next, bool training) const;

  /// x holds B*K snippet features, clip-major (row b*K + k). Snippet k < K-1 is
  /// fused with motion from pair (k, k+1); snippet K-1 is fused with zero motion.
  Tensor forward_snippets(const Tensor& x, std::int64_t segments, bool training) const;

  /// Stage pieces, exposed for inspection.
  Tensor reduce(const Tensor& x, bool training) const;
  Tensor fuse(const Tensor& f, const Tensor& motion, bool training) const;

  const Conv2d& reduce_conv() const { return reduce_conv_; }
  const Conv2d& compress_conv() const { return compress_conv_; }

 private:
  MotionBlockSpec spec_;
  Conv2d reduce_conv_;
  BatchNorm2d reduce_bn_;
  Conv2d compress_conv_;
  BatchNorm2d compress_bn_;
};

}  // namespace mfnet
