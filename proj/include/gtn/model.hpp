#pragma once

// The full network: two-stream backbone -> modal purification -> scale
// unification -> grouped transformer encoders -> cluster integration -> heads.

#include <array>
#include <cstdint>
#include <string>

#include "gtn/backbone.hpp"
#include "gtn/ciu.hpp"
#include "gtn/heads.hpp"
#include "gtn/mpm.hpp"
#include "gtn/mte.hpp"
#include "gtn/sum.hpp"

namespace gtn {

enum class FinalPrediction { s1, mean };

struct ModelConfig {
  std::string profile = "toy";
  std::size_t input_size = 64;
  LevelChannels level_channels{8, 16, 32, 48, 64};
  std::size_t width = 8;  // common channel width after the transition layer
  std::size_t cbam_reduction = 4;
  std::size_t purify_rounds = 1;
  std::size_t mte_dim = 32;
  std::size_t mte_heads = 4;
  std::size_t mte_layers = 2;
  std::size_t mte_ff_mult = 4;
  std::size_t ppa_window = 7;
  FinalPrediction final_prediction = FinalPrediction::s1;
  std::uint64_t seed = 0;

  static ModelConfig toy() { return {}; }

  static ModelConfig full() {
    ModelConfig c;
    c.profile = "full";
    c.input_size = 256;
    c.level_channels = {64, 256, 512, 1024, 2048};
    c.width = 64;
    c.cbam_reduction = 16;
    c.mte_dim = 64;
    c.ppa_window = 31;
    return c;
  }

  /// Grid sides of the high-group and middle-group encoders (f4 and f3 resolutions).
  std::size_t grid_high() const { return input_size / 16; }
  std::size_t grid_mid() const { return input_size / 8; }

  BackboneConfig backbone() const { return {input_size, level_channels, seed}; }

  EncoderConfig encoder(std::size_t grid) const {
    return {grid, width, mte_dim, mte_heads, mte_layers, mte_ff_mult};
  }

  void validate() const {
    backbone().validate();
    if (width == 0) throw std::invalid_argument("model: transition width must be positive");
    if (ppa_window == 0 || ppa_window % 2 == 0) throw std::invalid_argument("model: ppa_window must be odd");
    encoder(grid_high()).validate();
  }
};

/// Every intermediate of one forward pass, for inspection and testing.
struct ForwardTrace {
  FeaturePyramid rgb, depth;
  FeaturePyramid fused;         // f_cm
  FeaturePyramid transitioned;  // f_t
  GroupFeatures sum_h, sum_m;   // hf5/hf4/hf3, mf4/mf3/mf2
  GroupFeatures enc_h, enc_m;   // h'f, m'f
  ClusterSet clusters;
  std::array<Tensor, 3> integrated;  // f'_1..3
  std::array<Tensor, 3> maps;        // S_1..3
};

struct GroupTransNet {
  ModelConfig cfg;
  BackboneParams backbone;
  MpmParams mpm;
  SumParams sum;
  EncoderGroupParams mte_h;
  EncoderGroupParams mte_m;
  CiuParams ciu;
  HeadParams heads;

  explicit GroupTransNet(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    backbone = init_backbone(cfg.backbone());
    Rng rng(derive_seed(cfg.seed, {0x5EED}));
    mpm = init_mpm(cfg.level_channels, cfg.cbam_reduction, cfg.purify_rounds, rng);
    sum = init_sum(cfg.level_channels, cfg.width, rng);
    mte_h = init_encoder_group(cfg.encoder(cfg.grid_high()), rng);
    mte_m = init_encoder_group(cfg.encoder(cfg.grid_mid()), rng);
    ciu = init_ciu(cfg.width, rng);
    heads = init_heads(cfg.width, rng);
  }

  ParamList parameters() const {
    ParamList p;
    backbone.rgb.collect("backbone.rgb.", p);
    backbone.depth.collect("backbone.depth.", p);
    mpm.collect("mpm.", p);
    sum.collect("sum.", p);
    mte_h.collect("mte_h.", p);
    mte_m.collect("mte_m.", p);
    ciu.collect("ciu.", p);
    heads.collect("head.", p);
    return p;
  }

  /// rgb: N x 3 x S x S, depth: N x 1 x S x S.
  ForwardTrace forward(const Tensor& rgb, const Tensor& depth) const {
    ForwardTrace t;
    t.rgb = extract_pyramid(rgb, backbone.rgb);
    t.depth = extract_pyramid(depth, backbone.depth);
    if (rgb.dim(0) != depth.dim(0)) throw ShapeError("forward: rgb and depth batch sizes differ");
    t.fused = mpm_forward(t.rgb, t.depth, mpm);
    t.transitioned = transition(t.fused, sum);
    const auto& ft = t.transitioned;
    t.sum_h = sum_h(ft[2], ft[3], ft[4], sum);
    t.sum_m = sum_m(ft[1], ft[2], ft[3], sum);
    t.enc_h = encode_group(t.sum_h, mte_h);
    t.enc_m = encode_group(t.sum_m, mte_m);
    t.clusters = cluster(t.enc_h, t.enc_m);
    t.integrated = integrate_all(t.clusters, ft[0], ciu);
    t.maps = predict_heads(t.integrated, heads, cfg.input_size);
    return t;
  }

  std::array<Tensor, 3> predict(const Tensor& rgb, const Tensor& depth) const { return forward(rgb, depth).maps; }

  /// The map reported as the model's prediction: S_1, or the mean of the three.
  Tensor final_map(const std::array<Tensor, 3>& maps) const {
    if (cfg.final_prediction == FinalPrediction::s1) return maps[0];
    return scale(add(add(maps[0], maps[1]), maps[2]), 1.0 / 3.0);
  }
};

}  // namespace gtn
