#pragma once

// Pixel-position-aware loss: boundary-weighted BCE plus boundary-weighted IoU.
// Pixels whose k x k neighbourhood disagrees with their own label get weight
// up to 6; label-homogeneous neighbourhoods get weight 1.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtn/ops.hpp"

namespace gtn {

inline constexpr double kPpaBoundaryFactor = 5.0;
inline constexpr double kLogClamp = 1e-7;

/// Mean of g over the k x k window centred on each pixel, counting only
/// in-image pixels. g is one H x W plane.
inline std::vector<double> window_mean(std::span<const double> g, std::size_t H, std::size_t W, std::size_t k) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("window_mean: window must be odd");
  const std::size_t r = k / 2;
  // Summed-area table with a zero border row/column.
  std::vector<double> sat((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      sat[(y + 1) * (W + 1) + x + 1] =
          g[y * W + x] + sat[y * (W + 1) + x + 1] + sat[(y + 1) * (W + 1) + x] - sat[y * (W + 1) + x];
  std::vector<double> out(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(H, y + r + 1);
      const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(W, x + r + 1);
      const double s = sat[y1 * (W + 1) + x1] - sat[y0 * (W + 1) + x1] - sat[y1 * (W + 1) + x0] + sat[y0 * (W + 1) + x0];
      out[y * W + x] = s / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  return out;
}

/// omega = 1 + 5 |window_mean(G) - G| for every plane of an N x 1 x H x W mask.
inline std::vector<double> ppa_weights(const Tensor& G, std::size_t window) {
  if (G.rank() != 4) throw ShapeError("ppa_weights: expected N x 1 x H x W, got " + to_string(G.shape()));
  const std::size_t planes = G.dim(0) * G.dim(1), H = G.dim(2), W = G.dim(3);
  std::vector<double> w(G.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    auto g = G.data().subspan(p * H * W, H * W);
    const auto avg = window_mean(g, H, W, window);
    for (std::size_t i = 0; i < H * W; ++i) w[p * H * W + i] = 1.0 + kPpaBoundaryFactor * std::abs(avg[i] - g[i]);
  }
  return w;
}

struct PpaTerms {
  double wbce = 0.0;
  double wiou = 0.0;
};

namespace detail {

inline void check_ppa_inputs(const Tensor& S, const Tensor& G) {
  if (S.shape() != G.shape())
    throw ShapeError("ppa_loss: prediction " + to_string(S.shape()) + " and mask " + to_string(G.shape()) + " differ");
  if (S.rank() != 4 || S.dim(1) != 1) throw ShapeError("ppa_loss: expected N x 1 x H x W, got " + to_string(S.shape()));
  for (double g : G.data())
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("ppa_loss: ground truth must be binary {0,1}");
  for (double s : S.data()) {
    if (std::isnan(s)) throw NumericError("ppa_loss: prediction contains NaN");
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("ppa_loss: prediction must lie in [0,1]");
  }
}

}  // namespace detail

/// Per-image weighted BCE and weighted IoU terms (no gradient).
inline std::vector<PpaTerms> ppa_terms(const Tensor& S, const Tensor& G, std::size_t window) {
  detail::check_ppa_inputs(S, G);
  const std::size_t B = S.dim(0), P = S.dim(2) * S.dim(3);
  const auto w = ppa_weights(G, window);
  std::vector<PpaTerms> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    double wsum = 0.0, wbce = 0.0, inter = 0.0, uni = 0.0;
    for (std::size_t i = b * P; i < (b + 1) * P; ++i) {
      const double s = S[i], g = G[i], om = w[i];
      const double sc = std::clamp(s, kLogClamp, 1.0 - kLogClamp);
      wsum += om;
      wbce += om * (-g * std::log(sc) - (1.0 - g) * std::log(1.0 - sc));
      inter += om * s * g;
      uni += om * (s + g - s * g);
    }
    out[b] = {wbce / wsum, 1.0 - (inter + 1.0) / (uni + 1.0)};
  }
  return out;
}

/// Batch-mean of wBCE + wIoU. S: probabilities in [0,1], G: binary mask, both N x 1 x H x W.
inline Tensor ppa_loss(const Tensor& S, const Tensor& G, std::size_t window) {
  const auto terms = ppa_terms(S, G, window);
  const std::size_t B = S.dim(0), P = S.dim(2) * S.dim(3);
  double total = 0.0;
  for (const auto& t : terms) total += t.wbce + t.wiou;
  total /= static_cast<double>(B);
  auto w = ppa_weights(G, window);
  std::vector<double> g(G.data().begin(), G.data().end());
  return detail::make_result(
      "ppa_loss", {1}, {total}, {S}, [w = std::move(w), g = std::move(g), B, P](detail::Node& self) {
        auto& ps = self.parents[0];
        const double upstream = self.grad[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
          double wsum = 0.0, inter = 0.0, uni = 0.0;
          for (std::size_t i = b * P; i < (b + 1) * P; ++i) {
            const double s = ps->data[i];
            wsum += w[i];
            inter += w[i] * s * g[i];
            uni += w[i] * (s + g[i] - s * g[i]);
          }
          const double den = uni + 1.0;
          for (std::size_t i = b * P; i < (b + 1) * P; ++i) {
            const double s = ps->data[i];
            double d = 0.0;
            if (s > kLogClamp && s < 1.0 - kLogClamp) d += w[i] / wsum * (-g[i] / s + (1.0 - g[i]) / (1.0 - s));
            // d/ds of 1 - (I + 1)/(U + 1)
            const double dI = w[i] * g[i], dU = w[i] * (1.0 - g[i]);
            d -= (dI * den - (inter + 1.0) * dU) / (den * den);
            ps->grad[i] += upstream * d;
          }
        }
      });
}

/// Unweighted sum of the PPA loss over the three supervised maps.
inline Tensor total_loss(const std::array<Tensor, 3>& maps, const Tensor& G, std::size_t window) {
  return add(add(ppa_loss(maps[0], G, window), ppa_loss(maps[1], G, window)), ppa_loss(maps[2], G, window));
}

}  // namespace gtn
