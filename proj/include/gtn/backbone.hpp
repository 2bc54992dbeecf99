#pragma once

// Two-stream five-level convolutional feature extractor. It keeps the stride
// (2, 4, 8, 16, 32) and per-level channel schedule of a ResNet-50 trunk but is
// a plain randomly initialized conv net.

#include <array>
#include <cstdint>
#include <string>

#include "gtn/nn.hpp"

namespace gtn {

inline constexpr std::size_t kLevels = 5;
using LevelChannels = std::array<std::size_t, kLevels>;

struct BackboneConfig {
  std::size_t input_size = 64;
  LevelChannels level_channels{8, 16, 32, 48, 64};
  std::uint64_t seed = 0;

  void validate() const {
    if (input_size == 0 || input_size % 32 != 0)
      throw std::invalid_argument("backbone: input_size must be a positive multiple of 32, got " +
                                  std::to_string(input_size));
    for (std::size_t i = 0; i < kLevels; ++i) {
      if (level_channels[i] == 0) throw std::invalid_argument("backbone: level channels must be positive");
      if (i && level_channels[i] <= level_channels[i - 1])
        throw std::invalid_argument("backbone: level channels must be strictly increasing");
    }
  }
};

struct FeaturePyramid {
  std::array<Tensor, kLevels> levels;  // levels[0] is f1 (stride 2) ... levels[4] is f5 (stride 32)

  const Tensor& operator[](std::size_t i) const { return levels[i]; }
  Tensor& operator[](std::size_t i) { return levels[i]; }
};

struct BackboneStage {
  Conv down;    // stride-2 3x3
  Conv refine;  // stride-1 3x3
};

struct StreamParams {
  std::size_t in_channels = 0;
  std::size_t input_size = 0;
  std::array<BackboneStage, kLevels> stages;

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < kLevels; ++i) {
      const auto p = prefix + "stage" + std::to_string(i + 1) + ".";
      stages[i].down.collect(p + "down.", out);
      stages[i].refine.collect(p + "refine.", out);
    }
  }
};

struct BackboneParams {
  StreamParams rgb;
  StreamParams depth;
};

inline StreamParams make_stream(std::size_t in_channels, const BackboneConfig& cfg, Rng& rng) {
  StreamParams s;
  s.in_channels = in_channels;
  s.input_size = cfg.input_size;
  std::size_t c_in = in_channels;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::size_t c = cfg.level_channels[i];
    s.stages[i].down = Conv::make(c_in, c, 3, 2, rng);
    s.stages[i].refine = Conv::make(c, c, 3, 1, rng);
    c_in = c;
  }
  return s;
}

/// RGB stream takes 3 input channels, depth stream 1. The streams share nothing.
inline BackboneParams init_backbone(const BackboneConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, {0xBAC0}));
  BackboneParams p;
  p.rgb = make_stream(3, cfg, rng);
  p.depth = make_stream(1, cfg, rng);
  return p;
}

/// Closed-form parameter count of one stream.
inline std::size_t stream_param_count(std::size_t in_channels, const LevelChannels& ch) {
  std::size_t n = 0, c_in = in_channels;
  for (auto c : ch) {
    n += Conv::param_count(c_in, c, 3) + Conv::param_count(c, c, 3);
    c_in = c;
  }
  return n;
}

inline FeaturePyramid extract_pyramid(const Tensor& image, const StreamParams& p) {
  if (image.rank() != 4 || image.dim(1) != p.in_channels || image.dim(2) != p.input_size ||
      image.dim(3) != p.input_size)
    throw ShapeError("extract_pyramid: expected N x " + std::to_string(p.in_channels) + " x " +
                     std::to_string(p.input_size) + " x " + std::to_string(p.input_size) + ", got " +
                     to_string(image.shape()));
  FeaturePyramid out;
  Tensor x = image;
  for (std::size_t i = 0; i < kLevels; ++i) {
    x = conv_relu(p.stages[i].down, x);
    x = conv_relu(p.stages[i].refine, x);
    out[i] = x;
  }
  return out;
}

}  // namespace gtn
