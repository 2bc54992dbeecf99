#pragma once

// Saliency evaluation: MAE, average F-measure with PR/F curves, S-measure and
// E-measure, plus directory evaluation and a plain-text report.
//
// Maps are 1-channel Images; predictions in [0,1], ground truth in {0,1}.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/image.hpp"

namespace gtn {

inline constexpr double kMetricEps = 1e-12;
inline constexpr double kBeta2 = 0.3;
inline constexpr std::size_t kThresholds = 256;

namespace detail {

inline void check_pair(const char* what, const Image& P, const Image& G) {
  if (P.channels != 1 || G.channels != 1)
    throw ShapeError(std::string(what) + ": maps must have one channel");
  if (P.height != G.height || P.width != G.width)
    throw ShapeError(std::string(what) + ": map is " + std::to_string(P.height) + "x" + std::to_string(P.width) +
                     " but ground truth is " + std::to_string(G.height) + "x" + std::to_string(G.width));
  if (P.data.empty()) throw ShapeError(std::string(what) + ": empty map");
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

inline double mae(const Image& P, const Image& G) {
  detail::check_pair("mae", P, G);
  double s = 0;
  for (std::size_t i = 0; i < P.data.size(); ++i) s += std::abs(P.data[i] - G.data[i]);
  return s / static_cast<double>(P.data.size());
}

// ---------------------------------------------------------------------------
// F-measure

inline double f_beta(double precision, double recall) {
  const double den = kBeta2 * precision + recall;
  return den > 0.0 ? (1.0 + kBeta2) * precision * recall / den : 0.0;
}

struct PrPoint {
  double precision = 0, recall = 0, f = 0;
};

using PrCurve = std::array<PrPoint, kThresholds>;

/// Point k binarizes P > k/255.
inline PrCurve pr_curve(const Image& P, const Image& G) {
  detail::check_pair("pr_curve", P, G);
  std::array<double, kThresholds + 1> fg_above{}, bg_above{};  // bin n = number of thresholds below p
  double fg_total = 0;
  for (std::size_t i = 0; i < P.data.size(); ++i) {
    const double p = P.data[i];
    // Guess from p*255, then settle with the exact comparison used for binarizing.
    auto n = static_cast<std::size_t>(std::clamp(std::ceil(p * 255.0), 0.0, 256.0));
    while (n > 0 && !(p > static_cast<double>(n - 1) / 255.0)) --n;
    while (n < kThresholds && p > static_cast<double>(n) / 255.0) ++n;
    const bool fg = G.data[i] > 0.5;
    fg_total += fg;
    (fg ? fg_above : bg_above)[n] += 1;
  }
  // Suffix sums: pixels with n > k are positive at threshold k.
  PrCurve c;
  double tp = 0, fp = 0;
  for (std::size_t k = kThresholds; k-- > 0;) {
    tp += fg_above[k + 1];
    fp += bg_above[k + 1];
    auto& pt = c[k];
    pt.precision = tp / (tp + fp + kMetricEps);
    pt.recall = tp / (fg_total + kMetricEps);
    pt.f = f_beta(pt.precision, pt.recall);
  }
  return c;
}

inline double f_measure_avg(const Image& P, const Image& G) {
  const auto c = pr_curve(P, G);
  double s = 0;
  for (const auto& pt : c) s += pt.f;
  return s / static_cast<double>(kThresholds);
}

inline double adaptive_threshold(const Image& P) { return std::min(2.0 * detail::mean_of(P.data), 1.0); }

/// Single F at the adaptive threshold, binarizing P >= min(2 mean(P), 1).
inline double f_measure_adaptive(const Image& P, const Image& G) {
  detail::check_pair("f_measure_adaptive", P, G);
  const double thr = adaptive_threshold(P);
  double tp = 0, fp = 0, fg = 0;
  for (std::size_t i = 0; i < P.data.size(); ++i) {
    const bool pos = P.data[i] >= thr, g = G.data[i] > 0.5;
    tp += pos && g;
    fp += pos && !g;
    fg += g;
  }
  return f_beta(tp / (tp + fp + kMetricEps), tp / (fg + kMetricEps));
}

// ---------------------------------------------------------------------------
// S-measure

namespace detail {

inline double object_score(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  const double m = mean_of(x);
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
  return 2.0 * m / (m * m + 1.0 + 2.0 * sd + kMetricEps);
}

// Single-window SSIM of P against G over rows [y0,y1) x cols [x0,x1).
inline double region_ssim(const Image& P, const Image& G, std::size_t y0, std::size_t y1, std::size_t x0,
                          std::size_t x1) {
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  double mx = 0, my = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) mx += P.at(0, y, x), my += G.at(0, y, x);
  mx /= n, my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double a = P.at(0, y, x) - mx, b = G.at(0, y, x) - my;
      vx += a * a, vy += b * b, cxy += a * b;
    }
  vx /= n - 1 + kMetricEps, vy /= n - 1 + kMetricEps, cxy /= n - 1 + kMetricEps;
  const double num = 4.0 * mx * my * cxy;
  const double den = (mx * mx + my * my) * (vx + vy);
  if (num != 0.0) return num / (den + kMetricEps);
  return den == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

inline double s_object(const Image& P, const Image& G) {
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < P.data.size(); ++i) {
    if (G.data[i] > 0.5) fg.push_back(P.data[i]);
    else bg.push_back(1.0 - P.data[i]);
  }
  const double mu = static_cast<double>(fg.size()) / static_cast<double>(P.data.size());
  return mu * detail::object_score(fg) + (1.0 - mu) * detail::object_score(bg);
}

/// Column / row of the split point: rounded foreground centroid, 1-based, so
/// the left (top) block holds indices [0, X).
inline std::pair<std::size_t, std::size_t> fg_centroid(const Image& G) {
  double sx = 0, sy = 0, n = 0;
  for (std::size_t y = 0; y < G.height; ++y)
    for (std::size_t x = 0; x < G.width; ++x)
      if (G.at(0, y, x) > 0.5) sx += x, sy += y, n += 1;
  if (n == 0) return {G.width / 2, G.height / 2};
  return {static_cast<std::size_t>(std::lround(sx / n)) + 1, static_cast<std::size_t>(std::lround(sy / n)) + 1};
}

inline double s_region(const Image& P, const Image& G) {
  auto [X, Y] = fg_centroid(G);
  X = std::min(X, G.width), Y = std::min(Y, G.height);
  const std::size_t ys[3] = {0, Y, G.height}, xs[3] = {0, X, G.width};
  double fg_total = 0;
  for (double g : G.data) fg_total += g > 0.5;
  double s = 0;
  for (std::size_t by = 0; by < 2; ++by)
    for (std::size_t bx = 0; bx < 2; ++bx) {
      const std::size_t y0 = ys[by], y1 = ys[by + 1], x0 = xs[bx], x1 = xs[bx + 1];
      if (y0 == y1 || x0 == x1) continue;
      double fg = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) fg += G.at(0, y, x) > 0.5;
      if (fg == 0) continue;
      s += fg / fg_total * detail::region_ssim(P, G, y0, y1, x0, x1);
    }
  return s;
}

inline double s_measure(const Image& P, const Image& G, double alpha = 0.5) {
  detail::check_pair("s_measure", P, G);
  const double y = detail::mean_of(G.data);
  if (y == 0.0) return 1.0 - detail::mean_of(P.data);
  if (y == 1.0) return detail::mean_of(P.data);
  const double s = alpha * s_object(P, G) + (1.0 - alpha) * s_region(P, G);
  return std::clamp(s, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// E-measure

/// E-measure of an already binary prediction.
inline double e_measure_binary(const Image& Pbin, const Image& G) {
  detail::check_pair("e_measure", Pbin, G);
  const double mg = detail::mean_of(G.data), mp = detail::mean_of(Pbin.data);
  if (mg == 0.0) return 1.0 - mp;
  if (mg == 1.0) return mp;
  double s = 0;
  for (std::size_t i = 0; i < G.data.size(); ++i) {
    const double a = G.data[i] - mg, b = Pbin.data[i] - mp;
    const double xi = 2.0 * a * b / (a * a + b * b + kMetricEps);
    s += 0.25 * (1.0 + xi) * (1.0 + xi);
  }
  return s / static_cast<double>(G.data.size());
}

inline Image binarize_adaptive(const Image& P) {
  const double thr = adaptive_threshold(P);
  Image out = P;
  for (double& v : out.data) v = v >= thr ? 1.0 : 0.0;
  return out;
}

/// Adaptive-threshold E-measure: P is binarized at min(2 mean(P), 1) first.
inline double e_measure(const Image& P, const Image& G) {
  detail::check_pair("e_measure", P, G);
  return e_measure_binary(binarize_adaptive(P), G);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::size_t images = 0;
  double s_alpha = 0, f_beta_avg = 0, f_beta_adaptive = 0, e_xi = 0, mae = 0;
  PrCurve curve{};

  bool operator==(const MetricReport& o) const {
    if (images != o.images || s_alpha != o.s_alpha || f_beta_avg != o.f_beta_avg ||
        f_beta_adaptive != o.f_beta_adaptive || e_xi != o.e_xi || mae != o.mae)
      return false;
    for (std::size_t k = 0; k < kThresholds; ++k)
      if (curve[k].precision != o.curve[k].precision || curve[k].recall != o.curve[k].recall ||
          curve[k].f != o.curve[k].f)
        return false;
    return true;
  }
};

inline MetricReport evaluate_image(const Image& P, const Image& G) {
  MetricReport r;
  r.images = 1;
  r.curve = pr_curve(P, G);
  for (const auto& pt : r.curve) r.f_beta_avg += pt.f;
  r.f_beta_avg /= static_cast<double>(kThresholds);
  r.f_beta_adaptive = f_measure_adaptive(P, G);
  r.s_alpha = s_measure(P, G);
  r.e_xi = e_measure(P, G);
  r.mae = mae(P, G);
  return r;
}

/// Arithmetic mean of per-image reports, curves averaged pointwise, summed in order.
inline MetricReport average_reports(const std::vector<MetricReport>& parts) {
  MetricReport r;
  if (parts.empty()) return r;
  for (const auto& p : parts) {
    r.s_alpha += p.s_alpha, r.f_beta_avg += p.f_beta_avg, r.f_beta_adaptive += p.f_beta_adaptive;
    r.e_xi += p.e_xi, r.mae += p.mae;
    for (std::size_t k = 0; k < kThresholds; ++k) {
      r.curve[k].precision += p.curve[k].precision;
      r.curve[k].recall += p.curve[k].recall;
      r.curve[k].f += p.curve[k].f;
    }
  }
  const double n = static_cast<double>(parts.size());
  r.images = parts.size();
  r.s_alpha /= n, r.f_beta_avg /= n, r.f_beta_adaptive /= n, r.e_xi /= n, r.mae /= n;
  for (auto& pt : r.curve) pt.precision /= n, pt.recall /= n, pt.f /= n;
  return r;
}

inline Image binarize_gt(Image g) {
  for (double& v : g.data) v = v * 255.0 >= 127.5 ? 1.0 : 0.0;
  return g;
}

namespace detail {

inline std::map<std::string, std::filesystem::path> list_maps(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext != ".pgm" && ext != ".ppm") continue;
    out[e.path().stem().string()] = e.path();
  }
  return out;
}

}  // namespace detail

/// Matches maps by file stem; every prediction needs a ground truth and vice versa.
inline MetricReport evaluate_dir(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
  const auto preds = detail::list_maps(pred_dir);
  const auto gts = detail::list_maps(gt_dir);
  for (const auto& [name, path] : preds)
    if (!gts.count(name)) throw DataError("orphan prediction with no ground truth: " + path.string());
  for (const auto& [name, path] : gts)
    if (!preds.count(name)) throw DataError("orphan ground truth with no prediction: " + path.string());
  if (preds.empty()) throw DataError("no maps found in " + pred_dir.string());
  std::vector<MetricReport> parts;
  for (const auto& [name, path] : preds) {
    const Image P = read_pnm(path);
    const Image G = binarize_gt(read_pnm(gts.at(name)));
    if (P.channels != 1 || G.channels != 1) throw DataError("pair '" + name + "': maps must be grey (P5)");
    if (P.height != G.height || P.width != G.width)
      throw DataError("pair '" + name + "': prediction and ground truth sizes differ");
    parts.push_back(evaluate_image(P, G));
  }
  return average_reports(parts);
}

inline std::string format_report(const MetricReport& r) {
  std::string out;
  char buf[160];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.17g\n", key, v);
    out += buf;
  };
  out += "images=" + std::to_string(r.images) + "\n";
  line("s_alpha", r.s_alpha);
  line("f_beta_avg", r.f_beta_avg);
  line("f_beta_adaptive", r.f_beta_adaptive);
  line("e_xi", r.e_xi);
  line("mae", r.mae);
  out += "# curve: threshold precision recall f_beta\n";
  for (std::size_t k = 0; k < kThresholds; ++k) {
    std::snprintf(buf, sizeof buf, "curve %zu %.17g %.17g %.17g\n", k, r.curve[k].precision, r.curve[k].recall,
                  r.curve[k].f);
    out += buf;
  }
  return out;
}

inline MetricReport parse_report(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t curve_rows = 0;
  bool seen[6] = {};
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("curve ", 0) == 0) {
      std::istringstream ls(line.substr(6));
      std::size_t k;
      PrPoint pt;
      if (!(ls >> k >> pt.precision >> pt.recall >> pt.f) || k >= kThresholds)
        throw DataError("report: malformed curve row '" + line + "'");
      r.curve[k] = pt;
      ++curve_rows;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("report: malformed line '" + line + "'");
    const auto key = line.substr(0, eq), val = line.substr(eq + 1);
    static const char* keys[6] = {"images", "s_alpha", "f_beta_avg", "f_beta_adaptive", "e_xi", "mae"};
    double* slots[6] = {nullptr, &r.s_alpha, &r.f_beta_avg, &r.f_beta_adaptive, &r.e_xi, &r.mae};
    std::size_t i = 0;
    while (i < 6 && key != keys[i]) ++i;
    if (i == 6) throw DataError("report: unknown key '" + key + "'");
    seen[i] = true;
    if (i == 0) r.images = std::stoul(val);
    else *slots[i] = std::strtod(val.c_str(), nullptr);
  }
  for (bool s : seen)
    if (!s) throw DataError("report: missing summary key");
  if (curve_rows != kThresholds) throw DataError("report: expected 256 curve rows");
  return r;
}

}  // namespace gtn
