#include <cmath>

#include <gtest/gtest.h>

#include "gtn/grad_check.hpp"
#include "gtn/loss.hpp"
#include "oracles.hpp"

using namespace gtn;

namespace {

struct Pair {
  Tensor S, G;
};

Pair random_pair(std::size_t B, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> s(B * H * W), g(B * H * W);
  // blobby labels so windows see both classes
  for (std::size_t b = 0; b < B; ++b) {
    const double cy = rng.uniform(0, H), cx = rng.uniform(0, W), r = rng.uniform(1.5, H / 2.0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = (b * H + y) * W + x;
        g[i] = std::hypot(y - cy, x - cx) < r ? 1.0 : 0.0;
        s[i] = rng.uniform(0.01, 0.99);
      }
  }
  return {Tensor::from({B, 1, H, W}, s, true), Tensor::from({B, 1, H, W}, g)};
}

double oracle_loss(const Tensor& S, const Tensor& G, std::size_t k) {
  return oracle::ppa_loss({S.data().begin(), S.data().end()}, {G.data().begin(), G.data().end()}, S.dim(0), S.dim(2),
                          S.dim(3), k);
}

}  // namespace

TEST(PpaLoss, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_pair(2, 8, 8, seed);
    for (std::size_t k : {3u, 5u, 7u}) EXPECT_NEAR(ppa_loss(p.S, p.G, k).item(), oracle_loss(p.S, p.G, k), 1e-12);
  }
}

TEST(PpaLoss, NonNegative) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_pair(1, 8, 8, seed);
    EXPECT_GE(ppa_loss(p.S, p.G, 7).item(), 0.0);
  }
}

TEST(PpaLoss, WeightIsOneOnHomogeneousWindows) {
  std::vector<double> g(16 * 16, 0.0);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 8; x < 16; ++x) g[y * 16 + x] = 1.0;
  const auto w = ppa_weights(Tensor::from({1, 1, 16, 16}, g), 3);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      if (x <= 6 || x >= 9)
        EXPECT_EQ(w[y * 16 + x], 1.0) << y << "," << x;
      else
        EXPECT_GT(w[y * 16 + x], 1.0);
    }
  for (double v : ppa_weights(Tensor::full({1, 1, 5, 5}, 1.0), 7)) EXPECT_EQ(v, 1.0);
}

TEST(PpaLoss, VanishesAsPredictionApproachesMask) {
  const auto p = random_pair(1, 8, 8, 3);
  double prev = 1e300;
  for (double d : {0.3, 0.1, 1e-2, 1e-4, 1e-6}) {
    std::vector<double> s(p.G.numel());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = p.G[i] == 1.0 ? 1 - d : d;
    const double l = ppa_loss(Tensor::from(p.G.shape(), s), p.G, 7).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-4);
}

TEST(PpaLoss, GradientMatchesDifferences) {
  const auto p = random_pair(2, 6, 6, 8);
  const Tensor G = p.G;
  const auto rep = grad_check([G](const std::vector<Tensor>& v) { return ppa_loss(v[0], G, 3); }, {p.S}, 1e-6, 1e-6);
  EXPECT_TRUE(rep.passed()) << rep.worst;
}

TEST(PpaLoss, TotalIsUnweightedSum) {
  const auto a = random_pair(1, 8, 8, 1), b = random_pair(1, 8, 8, 2), c = random_pair(1, 8, 8, 3);
  const auto t = total_loss({a.S, b.S, c.S}, a.G, 7).item();
  EXPECT_NEAR(t, ppa_loss(a.S, a.G, 7).item() + ppa_loss(b.S, a.G, 7).item() + ppa_loss(c.S, a.G, 7).item(), 1e-14);
}

TEST(PpaLoss, RejectsBadInputs) {
  const auto p = random_pair(1, 4, 4, 1);
  EXPECT_THROW(ppa_loss(p.S, Tensor::full({1, 1, 4, 4}, 0.5), 3), std::invalid_argument);
  EXPECT_THROW(ppa_loss(Tensor::full({1, 1, 4, 4}, 1.5), p.G, 3), std::invalid_argument);
  EXPECT_THROW(ppa_loss(p.S, Tensor::zeros({1, 1, 4, 5}), 3), ShapeError);
  EXPECT_THROW(ppa_loss(p.S, p.G, 4), std::invalid_argument);
}

TEST(PpaLoss, IdenticalHeadsTripleTheLoss) {
  const auto p = random_pair(2, 8, 8, 4);
  EXPECT_NEAR(total_loss({p.S, p.S, p.S}, p.G, 7).item(), 3 * ppa_loss(p.S, p.G, 7).item(), 1e-14);
}
