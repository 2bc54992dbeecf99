#pragma once

// Modal purification: parameter-free cross-modal multiplicative purification
// followed by CBAM-style channel then spatial attention, one parameter set per
// pyramid level.

#include <array>
#include <string>

#include "gtn/backbone.hpp"
#include "gtn/nn.hpp"

namespace gtn {

struct AttentionParams {
  Linear squeeze;  // C -> C / r
  Linear expand;   // C / r -> C
  Conv spatial;    // 2 -> 1, 7x7, pad 3

  static AttentionParams make(std::size_t channels, std::size_t reduction, Rng& rng) {
    if (reduction == 0 || channels % reduction != 0)
      throw std::invalid_argument("attention: reduction ratio " + std::to_string(reduction) +
                                  " does not divide channel count " + std::to_string(channels));
    AttentionParams p;
    p.squeeze = Linear::make(channels, channels / reduction, rng);
    p.expand = Linear::make(channels / reduction, channels, rng);
    p.spatial = Conv::make(2, 1, 7, 1, rng);
    return p;
  }

  std::size_t channels() const { return squeeze.weight.dim(0); }

  void collect(const std::string& prefix, ParamList& out) const {
    squeeze.collect(prefix + "ca.squeeze.", out);
    expand.collect(prefix + "ca.expand.", out);
    spatial.collect(prefix + "sa.", out);
  }
};

struct MpmParams {
  std::array<AttentionParams, kLevels> levels;
  std::size_t rounds = 1;

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < kLevels; ++i) levels[i].collect(prefix + "level" + std::to_string(i + 1) + ".", out);
  }
};

inline MpmParams init_mpm(const LevelChannels& channels, std::size_t reduction, std::size_t rounds, Rng& rng) {
  if (rounds == 0) throw std::invalid_argument("mpm: purification rounds must be >= 1");
  MpmParams p;
  p.rounds = rounds;
  for (std::size_t i = 0; i < kLevels; ++i) p.levels[i] = AttentionParams::make(channels[i], reduction, rng);
  return p;
}

/// f~ = rgb*d;  rgb' = (f~ + rgb)*rgb;  d' = (f~ + d)*d;  returns rgb' + d'.
/// Extra rounds feed (rgb', d') back in before the final sum.
inline Tensor purify(const Tensor& f_rgb, const Tensor& f_d, std::size_t rounds = 1) {
  if (f_rgb.shape() != f_d.shape())
    throw ShapeError("purify: modal features differ in shape: " + to_string(f_rgb.shape()) + " vs " +
                     to_string(f_d.shape()));
  Tensor a = f_rgb, b = f_d;
  for (std::size_t r = 0; r < rounds; ++r) {
    const Tensor cross = mul(a, b);
    const Tensor a_next = mul(add(cross, a), a);
    const Tensor b_next = mul(add(cross, b), b);
    a = a_next;
    b = b_next;
  }
  return add(a, b);
}

/// Per-channel gate sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))), shape N x C.
inline Tensor channel_gate(const Tensor& x, const AttentionParams& p) {
  if (x.rank() != 4 || x.dim(1) != p.channels())
    throw ShapeError("channel_attention: expected " + std::to_string(p.channels()) + " channels, got " +
                     to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1);
  auto mlp = [&](const Tensor& v) { return p.expand(relu(p.squeeze(v))); };
  const Tensor avg = reshape(reduce(ReduceKind::mean, x, {2, 3}), {N, C});
  const Tensor mx = reshape(reduce(ReduceKind::max, x, {2, 3}), {N, C});
  return sigmoid(add(mlp(avg), mlp(mx)));
}

inline Tensor channel_attention(const Tensor& x, const AttentionParams& p) {
  const Tensor gate = reshape(channel_gate(x, p), {x.dim(0), x.dim(1), 1, 1});
  return mul(x, repeat_to(gate, x.shape()));
}

/// Per-position gate sigmoid(conv7x7([mean_c(x), max_c(x)])), shape N x 1 x H x W.
inline Tensor spatial_gate(const Tensor& x, const AttentionParams& p) {
  if (x.rank() != 4) throw ShapeError("spatial_attention: expected N x C x H x W, got " + to_string(x.shape()));
  const Tensor pooled = concat({reduce(ReduceKind::mean, x, {1}), reduce(ReduceKind::max, x, {1})}, 1);
  return sigmoid(p.spatial(pooled));
}

inline Tensor spatial_attention(const Tensor& x, const AttentionParams& p) {
  return mul(x, repeat_to(spatial_gate(x, p), x.shape()));
}

/// f_cm = SA(CA(purify(f_rgb, f_d))) for one level.
inline Tensor mpm_forward(const Tensor& f_rgb, const Tensor& f_d, const AttentionParams& p, std::size_t rounds = 1) {
  return spatial_attention(channel_attention(purify(f_rgb, f_d, rounds), p), p);
}

inline FeaturePyramid mpm_forward(const FeaturePyramid& rgb, const FeaturePyramid& depth, const MpmParams& p) {
  FeaturePyramid out;
  for (std::size_t i = 0; i < kLevels; ++i) out[i] = mpm_forward(rgb[i], depth[i], p.levels[i], p.rounds);
  return out;
}

}  // namespace gtn
