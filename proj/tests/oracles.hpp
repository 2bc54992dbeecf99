#pragma once

// Straight-line scalar-loop reimplementations used as test oracles. Nothing
// here calls into the library's metric or loss code.

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtn/image.hpp"
#include "gtn/random.hpp"

namespace oracle {

constexpr double kEps = 1e-12;

using Grid = std::vector<std::vector<double>>;

inline Grid grid(const gtn::Image& im) {
  Grid g(im.height, std::vector<double>(im.width));
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x) g[y][x] = im.data[y * im.width + x];
  return g;
}

inline double mae(const gtn::Image& P, const gtn::Image& G) {
  const Grid p = grid(P), g = grid(G);
  double s = 0;
  for (std::size_t y = 0; y < p.size(); ++y)
    for (std::size_t x = 0; x < p[y].size(); ++x) s += std::fabs(p[y][x] - g[y][x]);
  return s / double(P.height * P.width);
}

inline double fb(double prec, double rec) {
  if (0.3 * prec + rec == 0) return 0;
  return 1.3 * prec * rec / (0.3 * prec + rec);
}

struct PR {
  double p, r, f;
};

inline PR pr_at(const gtn::Image& P, const gtn::Image& G, int k) {
  const Grid p = grid(P), g = grid(G);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t y = 0; y < p.size(); ++y)
    for (std::size_t x = 0; x < p[y].size(); ++x) {
      const bool pos = p[y][x] > k / 255.0;
      if (pos && g[y][x] == 1) tp++;
      if (pos && g[y][x] == 0) fp++;
      if (!pos && g[y][x] == 1) fn++;
    }
  const double prec = tp / (tp + fp + kEps), rec = tp / (tp + fn + kEps);
  return {prec, rec, fb(prec, rec)};
}

inline double f_avg(const gtn::Image& P, const gtn::Image& G) {
  double s = 0;
  for (int k = 0; k < 256; ++k) s += pr_at(P, G, k).f;
  return s / 256;
}

inline double mean(const Grid& a) {
  double s = 0, n = 0;
  for (auto& row : a)
    for (double v : row) s += v, n++;
  return s / n;
}

inline double e_measure(const gtn::Image& P, const gtn::Image& G) {
  Grid p = grid(P), g = grid(G);
  const double thr = std::min(2 * mean(p), 1.0);
  for (auto& row : p)
    for (double& v : row) v = v >= thr ? 1 : 0;
  const double mp = mean(p), mg = mean(g);
  if (mg == 0) return 1 - mp;
  if (mg == 1) return mp;
  double s = 0;
  for (std::size_t y = 0; y < p.size(); ++y)
    for (std::size_t x = 0; x < p[y].size(); ++x) {
      const double a = g[y][x] - mg, b = p[y][x] - mp;
      const double xi = 2 * a * b / (a * a + b * b + kEps);
      s += (1 + xi) * (1 + xi) / 4;
    }
  return s / double(P.height * P.width);
}

inline double o_score(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(var / (v.size() - 1)) : 0;
  return 2 * m / (m * m + 1 + 2 * sd + kEps);
}

inline double ssim(const Grid& p, const Grid& g, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  const double n = double((y1 - y0) * (x1 - x0));
  double mx = 0, my = 0;
  for (auto y = y0; y < y1; ++y)
    for (auto x = x0; x < x1; ++x) mx += p[y][x] / n, my += g[y][x] / n;
  double sx = 0, sy = 0, sxy = 0;
  for (auto y = y0; y < y1; ++y)
    for (auto x = x0; x < x1; ++x) {
      sx += (p[y][x] - mx) * (p[y][x] - mx);
      sy += (g[y][x] - my) * (g[y][x] - my);
      sxy += (p[y][x] - mx) * (g[y][x] - my);
    }
  sx /= n - 1 + kEps, sy /= n - 1 + kEps, sxy /= n - 1 + kEps;
  const double a = 4 * mx * my * sxy, b = (mx * mx + my * my) * (sx + sy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1 : 0;
}

inline double s_measure(const gtn::Image& P, const gtn::Image& G) {
  const Grid p = grid(P), g = grid(G);
  const std::size_t H = p.size(), W = p[0].size();
  const double mg = mean(g);
  if (mg == 0) return 1 - mean(p);
  if (mg == 1) return mean(p);
  std::vector<double> fg, bg;
  double cy = 0, cx = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (g[y][x] == 1) fg.push_back(p[y][x]), cy += y, cx += x;
      else bg.push_back(1 - p[y][x]);
    }
  const double mu = fg.size() / double(H * W);
  const double so = mu * o_score(fg) + (1 - mu) * o_score(bg);
  const std::size_t Y = std::min(H, std::size_t(std::round(cy / fg.size())) + 1);
  const std::size_t X = std::min(W, std::size_t(std::round(cx / fg.size())) + 1);
  const std::size_t ys[] = {0, Y, Y, H}, xs[] = {0, X, X, W};
  double sr = 0;
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      const auto y0 = ys[2 * by], y1 = ys[2 * by + 1], x0 = xs[2 * bx], x1 = xs[2 * bx + 1];
      double n = 0;
      for (auto y = y0; y < y1; ++y)
        for (auto x = x0; x < x1; ++x) n += g[y][x];
      if (n > 0) sr += n / fg.size() * ssim(p, g, y0, y1, x0, x1);
    }
  return std::clamp(0.5 * so + 0.5 * sr, 0.0, 1.0);
}

// Random prediction and a ground truth that is either a blob or salt noise.
struct Case {
  gtn::Image P, G;
};

inline Case random_case(std::uint64_t seed, std::size_t side = 8) {
  gtn::Rng rng(seed);
  Case c{gtn::Image(1, side, side), gtn::Image(1, side, side)};
  const bool blob = rng.coin(0.7), quantized = rng.coin(0.5);
  const double cy = rng.uniform(0, side), cx = rng.uniform(0, side), r = rng.uniform(1, side / 1.5);
  const double density = rng.uniform(0.1, 0.9);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t i = y * side + x;
      c.G.data[i] = blob ? (std::hypot(y - cy, x - cx) < r ? 1.0 : 0.0) : (rng.coin(density) ? 1.0 : 0.0);
      const double v = rng.uniform();
      c.P.data[i] = quantized ? std::floor(v * 256) / 255.0 : v;
      if (c.P.data[i] > 1) c.P.data[i] = 1;
    }
  return c;
}

// PPA loss with a brute-force window.
inline double ppa_loss(const std::vector<double>& S, const std::vector<double>& G, std::size_t B, std::size_t H,
                       std::size_t W, std::size_t k) {
  const long r = long(k / 2);
  double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    auto g = [&](long y, long x) { return G[(b * H + y) * W + x]; };
    double wsum = 0, bce = 0, inter = 0, uni = 0;
    for (long y = 0; y < long(H); ++y)
      for (long x = 0; x < long(W); ++x) {
        double acc = 0;
        int n = 0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
            acc += g(yy, xx);
            ++n;
          }
        const double w = 1 + 5 * std::abs(acc / n - g(y, x));
        const double s = S[(b * H + y) * W + x], gt = g(y, x);
        wsum += w;
        bce += w * -(gt * std::log(s) + (1 - gt) * std::log(1 - s));
        inter += w * s * gt;
        uni += w * (s + gt - s * gt);
      }
    total += bce / wsum + 1 - (inter + 1) / (uni + 1);
  }
  return total / B;
}

}  // namespace oracle
