#include <set>

#include <gtest/gtest.h>

#include "gtn/model.hpp"

using namespace gtn;

namespace {

Tensor rand_t(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return uniform_tensor(std::move(s), lo, hi, rng, false);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

const GroupTransNet& toy_net() {
  static const GroupTransNet net(ModelConfig::toy());
  return net;
}

const ForwardTrace& toy_trace() {
  static const ForwardTrace t = [] {
    NoGradGuard ng;
    return toy_net().forward(rand_t({2, 3, 64, 64}, 1, 0, 1), rand_t({2, 1, 64, 64}, 2, 0, 1));
  }();
  return t;
}

}  // namespace

TEST(Backbone, PyramidStridesAndChannels) {
  const auto& t = toy_trace();
  const auto& ch = toy_net().cfg.level_channels;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const std::size_t side = 64 >> (i + 1);
    EXPECT_EQ(t.rgb[i].shape(), (Shape{2, ch[i], side, side})) << "level " << i;
    EXPECT_EQ(t.depth[i].shape(), t.rgb[i].shape());
    EXPECT_EQ(t.fused[i].shape(), t.rgb[i].shape());
    EXPECT_EQ(t.transitioned[i].shape(), (Shape{2, 8, side, side}));
  }
}

TEST(Backbone, StreamsAreIndependent) {
  const auto& b = toy_net().backbone;
  ParamList r, d;
  b.rgb.collect("", r);
  b.depth.collect("", d);
  EXPECT_EQ(r.count(), stream_param_count(3, toy_net().cfg.level_channels));
  EXPECT_EQ(d.count(), stream_param_count(1, toy_net().cfg.level_channels));
  for (const auto& x : r.tensors)
    for (const auto& y : d.tensors) EXPECT_FALSE(x.same_storage(y));
}

TEST(Backbone, RejectsWrongInput) {
  EXPECT_THROW(extract_pyramid(rand_t({1, 3, 32, 32}, 1), toy_net().backbone.rgb), ShapeError);
  EXPECT_THROW(extract_pyramid(rand_t({1, 1, 64, 64}, 1), toy_net().backbone.rgb), ShapeError);
}

TEST(Purify, HandComputedScalars) {
  // (1,1): cross 1, rgb' = 2, d' = 2.  (2,3): cross 6, rgb' = 16, d' = 27.
  EXPECT_EQ(purify(Tensor::from({1}, {1.0}), Tensor::from({1}, {1.0}))[0], 4.0);
  EXPECT_EQ(purify(Tensor::from({1}, {2.0}), Tensor::from({1}, {3.0}))[0], 43.0);
  EXPECT_EQ(purify(Tensor::from({1}, {0.0}), Tensor::from({1}, {5.0}))[0], 25.0);
}

TEST(Purify, Symmetric) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto a = rand_t({1, 2, 3, 3}, 2 * s, -3, 3), b = rand_t({1, 2, 3, 3}, 2 * s + 1, -3, 3);
    EXPECT_TRUE(bit_equal(purify(a, b), purify(b, a))) << "seed " << s;
  }
}

TEST(Purify, ExtraRoundsFeedBack) {
  const auto one = purify(Tensor::from({1}, {0.5}), Tensor::from({1}, {0.5}), 1);
  // (0.5,0.5) -> (0.375,0.375); second round: cross 0.140625, each (0.140625+0.375)*0.375
  const auto two = purify(Tensor::from({1}, {0.5}), Tensor::from({1}, {0.5}), 2);
  EXPECT_DOUBLE_EQ(one[0], 0.75);
  EXPECT_DOUBLE_EQ(two[0], 2 * (0.140625 + 0.375) * 0.375);
}

TEST(Purify, ShapeMismatchThrows) { EXPECT_THROW(purify(rand_t({1, 2}, 1), rand_t({2, 1}, 2)), ShapeError); }

TEST(Cbam, GatesLieInUnitInterval) {
  Rng rng(5);
  const auto p = AttentionParams::make(16, 4, rng);
  const auto x = rand_t({2, 16, 6, 6}, 9, -4, 4);
  for (const Tensor& g : {channel_gate(x, p), spatial_gate(x, p)})
    for (double v : g.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  EXPECT_EQ(channel_gate(x, p).shape(), (Shape{2, 16}));
  EXPECT_EQ(spatial_gate(x, p).shape(), (Shape{2, 1, 6, 6}));
}

TEST(Cbam, ReductionSetsHiddenWidth) {
  Rng rng(5);
  const auto p = AttentionParams::make(64, 16, rng);
  EXPECT_EQ(p.squeeze.weight.shape(), (Shape{64, 4}));
  EXPECT_EQ(p.expand.weight.shape(), (Shape{4, 64}));
  EXPECT_EQ(p.spatial.weight.shape(), (Shape{1, 2, 7, 7}));
}

TEST(Cbam, AttentionNeverGrowsMagnitude) {
  Rng rng(6);
  const auto p = AttentionParams::make(8, 4, rng);
  const auto x = rand_t({1, 8, 5, 5}, 3, -2, 2);
  const auto y = spatial_attention(channel_attention(x, p), p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
}

TEST(Sum, GroupResolutions) {
  const auto& t = toy_trace();
  for (const Tensor* f : {&t.sum_h.high, &t.sum_h.mid, &t.sum_h.low}) EXPECT_EQ(f->shape(), (Shape{2, 8, 4, 4}));
  for (const Tensor* f : {&t.sum_m.high, &t.sum_m.mid, &t.sum_m.low}) EXPECT_EQ(f->shape(), (Shape{2, 8, 8, 8}));
}

TEST(Sum, FuseArities) {
  const auto& s = toy_net().sum;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.fuse_h[i].in_channels(), kSumHArity[i] * 8);
    EXPECT_EQ(s.fuse_m[i].in_channels(), kSumMArity[i] * 8);
  }
}

TEST(Sum, RejectsMismatchedGroup) {
  const auto& s = toy_net().sum;
  EXPECT_THROW(sum_h(rand_t({1, 8, 8, 8}, 1), rand_t({1, 8, 4, 4}, 2), rand_t({1, 8, 4, 4}, 3), s), ShapeError);
}

TEST(Mte, GroupCountIsOneEncoder) {
  for (const auto* g : {&toy_net().mte_h, &toy_net().mte_m})
    EXPECT_EQ(g->parameters().count(), encoder_param_count(g->cfg));
  const EncoderConfig c{4, 8, 32, 4, 2, 4};
  // hand count: embed 256, pos 512, per layer 64+3*1056+1024+64+4224+4128, out 264
  EXPECT_EQ(encoder_param_count(c), 256u + 512u + 2u * (64 + 3 * 1056 + 1024 + 64 + 4224 + 4128) + 264u);
}

TEST(Mte, IdenticalSlotsGiveIdenticalOutputs) {
  NoGradGuard ng;
  const auto& g = toy_net().mte_h;
  const auto x = rand_t({1, 8, 4, 4}, 11);
  const auto out = encode_group({x, x, x}, g);
  EXPECT_TRUE(bit_equal(out.high, out.mid));
  EXPECT_TRUE(bit_equal(out.mid, out.low));
}

TEST(Mte, AttentionRowsSumToOne) {
  NoGradGuard ng;
  const auto& g = toy_net().mte_m;
  const auto z = tokenize(rand_t({1, 8, 8, 8}, 3), g);
  const auto att = attention_weights(g.layers[0].ln1(z), g.layers[0], g.cfg.heads);
  ASSERT_EQ(att.shape(), (Shape{4, 64, 64}));
  for (std::size_t r = 0; r < 4 * 64; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 64; ++j) s += att[r * 64 + j];
    EXPECT_NEAR(s, 1.0, 1e-13);
  }
}

TEST(Mte, GroupsAreIndependent) {
  NoGradGuard ng;
  GroupTransNet net(ModelConfig::toy());
  const auto rgb = rand_t({1, 3, 64, 64}, 1, 0, 1), depth = rand_t({1, 1, 64, 64}, 2, 0, 1);
  const auto before = net.forward(rgb, depth);
  ParamList h;
  net.mte_h.collect("", h);
  for (auto& t : h.tensors)
    for (double& v : t.mutable_data()) v += 0.05;
  const auto after = net.forward(rgb, depth);
  EXPECT_TRUE(bit_equal(before.enc_m.high, after.enc_m.high));
  EXPECT_TRUE(bit_equal(before.enc_m.mid, after.enc_m.mid));
  EXPECT_TRUE(bit_equal(before.enc_m.low, after.enc_m.low));
  EXPECT_FALSE(bit_equal(before.enc_h.high, after.enc_h.high));
}

TEST(Mte, RejectsWrongGrid) { EXPECT_THROW(tokenize(rand_t({1, 8, 8, 8}, 1), toy_net().mte_h), ShapeError); }

TEST(Ciu, ClustersPairMatchingLevels) {
  const auto& t = toy_trace();
  EXPECT_TRUE(t.clusters.classes[0].high.same_storage(t.enc_h.high));
  EXPECT_TRUE(t.clusters.classes[0].mid.same_storage(t.enc_m.high));
  EXPECT_TRUE(t.clusters.classes[1].high.same_storage(t.enc_h.mid));
  EXPECT_TRUE(t.clusters.classes[1].mid.same_storage(t.enc_m.mid));
  EXPECT_TRUE(t.clusters.classes[2].high.same_storage(t.enc_h.low));
  EXPECT_TRUE(t.clusters.classes[2].mid.same_storage(t.enc_m.low));
}

TEST(Ciu, VectorFormReordersAscendingLevels) {
  const auto a = rand_t({1}, 1), b = rand_t({1}, 2), c = rand_t({1}, 3);
  const auto d = rand_t({1}, 4), e = rand_t({1}, 5), f = rand_t({1}, 6);
  const auto cs = cluster(std::vector<Tensor>{a, b, c}, std::vector<Tensor>{d, e, f});
  EXPECT_TRUE(cs.classes[0].high.same_storage(c));  // h'f5
  EXPECT_TRUE(cs.classes[0].mid.same_storage(f));   // m'f4
  EXPECT_TRUE(cs.classes[2].high.same_storage(a));
  EXPECT_TRUE(cs.classes[2].mid.same_storage(d));
  EXPECT_THROW(cluster(std::vector<Tensor>{a, b}, std::vector<Tensor>{d, e, f}), std::invalid_argument);
}

TEST(Ciu, IntegratedAtF1Resolution) {
  for (const auto& f : toy_trace().integrated) EXPECT_EQ(f.shape(), (Shape{2, 8, 32, 32}));
}

TEST(Heads, MapsAreProbabilities) {
  for (const auto& m : toy_trace().maps) {
    ASSERT_EQ(m.shape(), (Shape{2, 1, 64, 64}));
    for (double v : m.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Model, FinalMapChoices) {
  const auto& maps = toy_trace().maps;
  EXPECT_TRUE(toy_net().final_map(maps).same_storage(maps[0]));
  auto cfg = ModelConfig::toy();
  cfg.final_prediction = FinalPrediction::mean;
  GroupTransNet mean_net(cfg);
  const auto m = mean_net.final_map(maps);
  EXPECT_NEAR(m[17], (maps[0][17] + maps[1][17] + maps[2][17]) / 3, 1e-15);
}

TEST(Model, ParameterNamesAreUnique) {
  const auto p = toy_net().parameters();
  std::set<std::string> names(p.names.begin(), p.names.end());
  EXPECT_EQ(names.size(), p.names.size());
  EXPECT_EQ(p.names.size(), p.tensors.size());
}

TEST(Model, SameSeedSameWeights) {
  GroupTransNet a(ModelConfig::toy()), b(ModelConfig::toy());
  auto c = ModelConfig::toy();
  c.seed = 1;
  GroupTransNet d(c);
  const auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(bit_equal(pa.tensors[i], pb.tensors[i])) << pa.names[i];
    any_diff = any_diff || !bit_equal(pa.tensors[i], pd.tensors[i]);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, ConfigValidation) {
  auto c = ModelConfig::toy();
  c.input_size = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::toy();
  c.mte_heads = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Heads, ZeroFeaturesGiveConstantMaps) {
  NoGradGuard ng;
  const auto& h = toy_net().heads;
  const Tensor z = Tensor::zeros({1, 8, 32, 32});
  const auto maps = predict_heads({z, z, z}, h, 64);
  for (std::size_t i = 0; i < 3; ++i) {
    // conv3 of zeros is its bias; relu; then the 1x1 conv
    double logit = h.conv1[i].bias[0];
    for (std::size_t c = 0; c < 8; ++c) logit += h.conv1[i].weight[c] * std::max(0.0, h.conv3[i].bias[c]);
    const double expect = 1.0 / (1.0 + std::exp(-logit));
    for (double v : maps[i].data()) EXPECT_NEAR(v, expect, 1e-15);
  }
}
