#pragma once

// Grouped transformer encoding. Every spatial site of a G x G feature map is
// one token (patch size 1). One EncoderGroupParams instance serves all three
// maps of its group; the two groups own disjoint parameters.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gtn/nn.hpp"
#include "gtn/sum.hpp"

namespace gtn {

struct EncoderConfig {
  std::size_t grid = 4;       // G; the encoder sees G*G tokens
  std::size_t channels = 8;   // feature width in and out
  std::size_t dim = 32;       // D
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_mult = 4;    // MLP hidden width = ff_mult * D

  std::size_t tokens() const { return grid * grid; }
  void validate() const {
    if (grid == 0 || channels == 0 || dim == 0 || heads == 0 || layers == 0 || ff_mult == 0)
      throw std::invalid_argument("encoder: all sizes must be positive");
    if (dim % heads != 0)
      throw std::invalid_argument("encoder: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                                  " heads");
  }
};

struct EncoderLayerParams {
  LayerNormParams ln1;
  Linear q, k, v, o;
  LayerNormParams ln2;
  Linear ff1, ff2;

  void collect(const std::string& prefix, ParamList& out) const {
    ln1.collect(prefix + "ln1.", out);
    q.collect(prefix + "attn.q.", out);
    k.collect(prefix + "attn.k.", out);
    v.collect(prefix + "attn.v.", out);
    o.collect(prefix + "attn.o.", out);
    ln2.collect(prefix + "ln2.", out);
    ff1.collect(prefix + "mlp.fc1.", out);
    ff2.collect(prefix + "mlp.fc2.", out);
  }
};

struct EncoderGroupParams {
  EncoderConfig cfg;
  Linear embed;      // C -> D, no bias
  Tensor pos;        // N x D learned positions
  std::vector<EncoderLayerParams> layers;
  Linear out_proj;   // D -> C

  void collect(const std::string& prefix, ParamList& out) const {
    embed.collect(prefix + "embed.", out);
    out.add(prefix + "pos", pos);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + "layer" + std::to_string(l + 1) + ".", out);
    out_proj.collect(prefix + "out_proj.", out);
  }

  ParamList parameters() const {
    ParamList p;
    collect("", p);
    return p;
  }
};

inline EncoderGroupParams init_encoder_group(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderGroupParams p;
  p.cfg = cfg;
  const std::size_t D = cfg.dim, F = cfg.ff_mult * cfg.dim;
  p.embed = Linear::make(cfg.channels, D, rng, false);
  p.pos = uniform_tensor({cfg.tokens(), D}, -0.02, 0.02, rng, true);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams L;
    L.ln1 = LayerNormParams::make(D);
    L.q = Linear::make(D, D, rng);
    L.k = Linear::make(D, D, rng, false);  // a key bias shifts every score of a query equally: softmax ignores it
    L.v = Linear::make(D, D, rng);
    L.o = Linear::make(D, D, rng);
    L.ln2 = LayerNormParams::make(D);
    L.ff1 = Linear::make(D, F, rng);
    L.ff2 = Linear::make(F, D, rng);
    p.layers.push_back(std::move(L));
  }
  p.out_proj = Linear::make(D, cfg.channels, rng);
  return p;
}

/// Closed-form parameter count of ONE encoder (and hence of a whole group).
inline std::size_t encoder_param_count(const EncoderConfig& c) {
  const std::size_t D = c.dim, F = c.ff_mult * c.dim, C = c.channels, N = c.tokens();
  const std::size_t per_layer = 2 * D + 4 * D * D + 3 * D + 2 * D + (D * F + F) + (F * D + D);
  return C * D + N * D + c.layers * per_layer + D * C + C;
}

/// N_b x C x G x G -> N_b x N x D: token_i = x[:, :, site_i] E + E_pos[i], sites in row-major order.
inline Tensor tokenize(const Tensor& x, const EncoderGroupParams& p) {
  const auto& c = p.cfg;
  if (x.rank() != 4 || x.dim(1) != c.channels || x.dim(2) != c.grid || x.dim(3) != c.grid)
    throw ShapeError("tokenize: expected N x " + std::to_string(c.channels) + " x " + std::to_string(c.grid) + " x " +
                     std::to_string(c.grid) + ", got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), N = c.tokens();
  const Tensor seq = permute(reshape(x, {B, c.channels, N}), {0, 2, 1});
  const Tensor pos = repeat_to(reshape(p.pos, {1, N, c.dim}), {B, N, c.dim});
  return add(p.embed(seq), pos);
}

namespace detail {

// B x N x D -> (B*h) x N x (D/h)
inline Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t B = t.dim(0), N = t.dim(1), D = t.dim(2), dh = D / heads;
  return reshape(permute(reshape(t, {B, N, heads, dh}), {0, 2, 1, 3}), {B * heads, N, dh});
}

inline Tensor merge_heads(const Tensor& t, std::size_t batch, std::size_t heads) {
  const std::size_t N = t.dim(1), dh = t.dim(2);
  return reshape(permute(reshape(t, {batch, heads, N, dh}), {0, 2, 1, 3}), {batch, N, heads * dh});
}

}  // namespace detail

/// Softmax attention weights of one layer, (B*h) x N x N. Rows sum to 1.
inline Tensor attention_weights(const Tensor& normed, const EncoderLayerParams& L, std::size_t heads) {
  const std::size_t D = normed.dim(2);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(D / heads));
  const Tensor q = detail::split_heads(L.q(normed), heads);
  const Tensor k = detail::split_heads(L.k(normed), heads);
  return softmax(scale(bmm(q, permute(k, {0, 2, 1})), scale_factor), 2);
}

inline Tensor multi_head_attention(const Tensor& normed, const EncoderLayerParams& L, std::size_t heads) {
  const Tensor att = attention_weights(normed, L, heads);
  const Tensor v = detail::split_heads(L.v(normed), heads);
  return L.o(detail::merge_heads(bmm(att, v), normed.dim(0), heads));
}

/// Pre-norm layer: z' = MSA(LN(z)) + z;  out = MLP(LN(z')) + z'.
inline Tensor transformer_layer(const Tensor& z, const EncoderLayerParams& L, std::size_t heads) {
  if (z.rank() != 3) throw ShapeError("transformer_layer: expected B x N x D tokens, got " + to_string(z.shape()));
  if (z.dim(2) % heads != 0) throw ShapeError("transformer_layer: token width not divisible by head count");
  const Tensor z1 = add(multi_head_attention(L.ln1(z), L, heads), z);
  return add(L.ff2(relu(L.ff1(L.ln2(z1)))), z1);
}

inline Tensor run_layers(const Tensor& tokens, const EncoderGroupParams& p) {
  Tensor z = tokens;
  for (const auto& L : p.layers) z = transformer_layer(z, L, p.cfg.heads);
  return z;
}

/// B x N x D -> B x C x G x G through the shared output projection.
inline Tensor detokenize(const Tensor& z, const EncoderGroupParams& p) {
  const auto& c = p.cfg;
  const std::size_t B = z.dim(0);
  return reshape(permute(p.out_proj(z), {0, 2, 1}), {B, c.channels, c.grid, c.grid});
}

inline Tensor encode(const Tensor& x, const EncoderGroupParams& p) { return detokenize(run_layers(tokenize(x, p), p), p); }

/// Runs the same encoder over the three maps of a group.
inline GroupFeatures encode_group(const GroupFeatures& f, const EncoderGroupParams& p) {
  if (f.high.shape() != f.mid.shape() || f.mid.shape() != f.low.shape())
    throw ShapeError("encode_group: group maps differ in shape: " + to_string(f.high.shape()) + ", " +
                     to_string(f.mid.shape()) + ", " + to_string(f.low.shape()));
  return {encode(f.high, p), encode(f.mid, p), encode(f.low, p)};
}

}  // namespace gtn
