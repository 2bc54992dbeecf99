#pragma once

// Scale unification: a 3x3 conv + ReLU transition that brings every level to
// a common channel width, then two grouped fusers that resize a group of
// three adjacent levels to the middle level's resolution and combine them
// with symmetric concatenations.
//
// Operands are resized before any concatenation, and every concatenation is
// followed by a 3x3 conv + ReLU restoring the common width, so all three
// outputs of a group share one shape and can go through one shared encoder.

#include <array>
#include <string>

#include "gtn/backbone.hpp"
#include "gtn/nn.hpp"

namespace gtn {

/// The three outputs of a group fuser, named by the level they came from
/// (high = deepest level of the group).
struct GroupFeatures {
  Tensor high, mid, low;
};

struct SumParams {
  std::size_t width = 8;  // common channel count after transition
  std::array<Conv, kLevels> transition;
  std::array<Conv, 3> fuse_h;  // input widths 2C, 2C, 3C
  std::array<Conv, 3> fuse_m;  // input widths 3C, 2C, 2C

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < kLevels; ++i) transition[i].collect(prefix + "transition" + std::to_string(i + 1) + ".", out);
    static constexpr const char* slot[] = {"high.", "mid.", "low."};
    for (std::size_t i = 0; i < 3; ++i) fuse_h[i].collect(prefix + "sum_h." + slot[i], out);
    for (std::size_t i = 0; i < 3; ++i) fuse_m[i].collect(prefix + "sum_m." + slot[i], out);
  }
};

inline constexpr std::array<std::size_t, 3> kSumHArity{2, 2, 3};
inline constexpr std::array<std::size_t, 3> kSumMArity{3, 2, 2};

inline SumParams init_sum(const LevelChannels& channels, std::size_t width, Rng& rng) {
  SumParams p;
  p.width = width;
  for (std::size_t i = 0; i < kLevels; ++i) p.transition[i] = Conv::make(channels[i], width, 3, 1, rng);
  for (std::size_t i = 0; i < 3; ++i) p.fuse_h[i] = Conv::make(kSumHArity[i] * width, width, 3, 1, rng);
  for (std::size_t i = 0; i < 3; ++i) p.fuse_m[i] = Conv::make(kSumMArity[i] * width, width, 3, 1, rng);
  return p;
}

inline FeaturePyramid transition(const FeaturePyramid& f_cm, const SumParams& p) {
  FeaturePyramid out;
  for (std::size_t i = 0; i < kLevels; ++i) {
    if (f_cm[i].rank() != 4 || f_cm[i].dim(1) != p.transition[i].in_channels())
      throw ShapeError("transition: level " + std::to_string(i + 1) + " expects " +
                       std::to_string(p.transition[i].in_channels()) + " channels, got " + to_string(f_cm[i].shape()));
    out[i] = conv_relu(p.transition[i], f_cm[i]);
  }
  return out;
}

namespace detail {

// Checks (low, mid, high) sides are (2s, s, s/2) and channel widths match.
inline void check_group(const char* op, const Tensor& low, const Tensor& mid, const Tensor& high, std::size_t width) {
  for (const Tensor* t : {&low, &mid, &high})
    if (t->rank() != 4 || t->dim(1) != width || t->dim(2) != t->dim(3))
      throw ShapeError(std::string(op) + ": expected square N x " + std::to_string(width) + " x s x s maps, got " +
                       to_string(t->shape()));
  const std::size_t s = mid.dim(2);
  if (low.dim(2) != 2 * s || high.dim(2) * 2 != s || low.dim(0) != mid.dim(0) || high.dim(0) != mid.dim(0))
    throw ShapeError(std::string(op) + ": resolution chain violated: " + to_string(low.shape()) + ", " +
                     to_string(mid.shape()) + ", " + to_string(high.shape()));
}

}  // namespace detail

/// High group {f3, f4, f5} at the f4 resolution.
inline GroupFeatures sum_h(const Tensor& f3, const Tensor& f4, const Tensor& f5, const SumParams& p) {
  detail::check_group("sum_h", f3, f4, f5, p.width);
  const std::size_t s = f4.dim(2);
  const Tensor h = up_to(f5, s);
  const Tensor& m = f4;
  const Tensor l = resize(f3, s, s, ResizeMode::avg_down);
  return {conv_relu(p.fuse_h[0], concat({h, m}, 1)), conv_relu(p.fuse_h[1], concat({m, h}, 1)),
          conv_relu(p.fuse_h[2], concat({l, m, h}, 1))};
}

/// Middle group {f2, f3, f4} at the f3 resolution.
inline GroupFeatures sum_m(const Tensor& f2, const Tensor& f3, const Tensor& f4, const SumParams& p) {
  detail::check_group("sum_m", f2, f3, f4, p.width);
  const std::size_t s = f3.dim(2);
  const Tensor h = up_to(f4, s);
  const Tensor& m = f3;
  const Tensor l = resize(f2, s, s, ResizeMode::avg_down);
  return {conv_relu(p.fuse_m[0], concat({h, m, l}, 1)), conv_relu(p.fuse_m[1], concat({m, l}, 1)),
          conv_relu(p.fuse_m[2], concat({l, m}, 1))};
}

}  // namespace gtn
