#pragma once

// RGB-D sample pairs: on-disk layout, synthetic generation, augmentation and
// input resizing.
//
// Layout: <root>/{rgb,depth,gt}/<name>.(ppm|pgm) plus <root>/manifest.txt
// listing one name per line ('#' starts a comment line). Depth convention:
// larger value = nearer.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gtn/image.hpp"
#include "gtn/random.hpp"

namespace gtn {

namespace fs = std::filesystem;

struct SamplePair {
  std::string name;
  Image rgb;    // 3 x S x S in [0,1]
  Image depth;  // 1 x S x S in [0,1]
  Image gt;     // 1 x S x S in {0,1}
};

struct SamplePaths {
  std::string name;
  fs::path rgb, depth, gt;
};

struct DatasetManifest {
  std::string split = "train";
  std::vector<SamplePaths> samples;
};

inline SamplePaths sample_paths(const fs::path& root, const std::string& name) {
  return {name, root / "rgb" / (name + ".ppm"), root / "depth" / (name + ".pgm"), root / "gt" / (name + ".pgm")};
}

inline fs::path manifest_path(const fs::path& root) { return root / "manifest.txt"; }

inline DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream in(manifest_path(root));
  if (!in) throw DataError("cannot open manifest " + manifest_path(root).string());
  DatasetManifest m;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# split=", 0) == 0) m.split = line.substr(8);
      continue;
    }
    if (!seen.insert(line).second) throw DataError("manifest lists '" + line + "' twice");
    auto p = sample_paths(root, line);
    for (const auto* f : {&p.rgb, &p.depth, &p.gt})
      if (!fs::exists(*f)) throw DataError("manifest entry '" + line + "' is missing " + f->string());
    m.samples.push_back(std::move(p));
  }
  if (m.samples.empty()) throw DataError("manifest " + manifest_path(root).string() + " lists no samples");
  return m;
}

inline void require_binary(const Image& gt, const std::string& what) {
  for (double v : gt.data)
    if (v != 0.0 && v != 1.0) throw DataError(what + ": ground truth is not binary");
}

/// RGB from P6, depth and gt from P5; 8-bit values scaled to [0,1]; gt
/// thresholded at 128.
inline SamplePair load_sample(const SamplePaths& p) {
  SamplePair s;
  s.name = p.name;
  s.rgb = read_pnm(p.rgb);
  s.depth = read_pnm(p.depth);
  s.gt = read_pnm(p.gt);
  if (s.rgb.channels != 3) throw DataError(p.rgb.string() + ": expected a P6 colour image");
  if (s.depth.channels != 1) throw DataError(p.depth.string() + ": expected a P5 grey image");
  if (s.gt.channels != 1) throw DataError(p.gt.string() + ": expected a P5 grey image");
  for (const Image* im : {&s.depth, &s.gt})
    if (im->height != s.rgb.height || im->width != s.rgb.width)
      throw DataError("sample '" + p.name + "': rgb, depth and gt sizes differ");
  for (double& v : s.gt.data) v = v * 255.0 >= 127.5 ? 1.0 : 0.0;
  return s;
}

inline std::vector<SamplePair> load_dataset(const fs::path& root) {
  std::vector<SamplePair> out;
  for (const auto& p : read_manifest(root).samples) out.push_back(load_sample(p));
  return out;
}

inline void write_sample(const fs::path& root, const SamplePair& s) {
  const auto p = sample_paths(root, s.name);
  write_pnm(p.rgb, s.rgb);
  write_pnm(p.depth, s.depth);
  write_pnm(p.gt, s.gt);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace detail {

struct Shape2D {
  bool ellipse = false;
  double cy = 0, cx = 0, ry = 0, rx = 0;  // centre and half-extents in pixels

  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

inline Shape2D random_shape(Rng& rng, double size, double min_frac, double max_frac) {
  Shape2D s;
  s.ellipse = rng.coin();
  s.ry = 0.5 * size * rng.uniform(min_frac, max_frac);
  s.rx = 0.5 * size * rng.uniform(min_frac, max_frac);
  s.cy = rng.uniform(s.ry, size - s.ry);
  s.cx = rng.uniform(s.rx, size - s.rx);
  return s;
}

// HSV with s, v in [0,1], h in [0,360).
inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double c = v * s, hp = h / 60.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  rgb[0] = r + m, rgb[1] = g + m, rgb[2] = b + m;
}

}  // namespace detail

/// One cluttered scene with a single salient shape (saturated hue, nearest
/// depth) and 0-2 desaturated, farther distractor shapes. Pure function of (size, seed).
inline SamplePair synth_sample(std::size_t size, std::uint64_t seed, std::string name) {
  Rng rng(seed);
  const double S = static_cast<double>(size);
  SamplePair s;
  s.name = std::move(name);
  s.rgb = Image(3, size, size);
  s.depth = Image(1, size, size);
  s.gt = Image(1, size, size);

  // Background: low-saturation colour field with a smooth wave and pixel noise;
  // depth is a far ramp in [0.05, 0.4].
  double base[3];
  detail::hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.0, 0.25), rng.uniform(0.3, 0.7), base);
  const double fy = rng.uniform(1, 4) * 2 * M_PI / S, fx = rng.uniform(1, 4) * 2 * M_PI / S;
  const double phase = rng.uniform(0, 2 * M_PI);
  const double d0 = rng.uniform(0.05, 0.2), dy = rng.uniform(-0.1, 0.1), dx = rng.uniform(-0.1, 0.1);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double wave = 0.12 * std::sin(fy * y + fx * x + phase);
      for (std::size_t c = 0; c < 3; ++c)
        s.rgb.at(c, y, x) = std::clamp(base[c] + wave + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      const double ramp = d0 + 0.1 + dy * (y / S - 0.5) + dx * (x / S - 0.5);
      s.depth.at(0, y, x) = std::clamp(ramp + rng.uniform(-0.02, 0.02), 0.05, 0.4);
    }

  const std::size_t distractors = rng.below(3);
  for (std::size_t k = 0; k < distractors; ++k) {
    const auto shape = detail::random_shape(rng, S, 0.15, 0.4);
    double col[3];
    detail::hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.0, 0.3), rng.uniform(0.2, 0.9), col);
    const double depth = rng.uniform(0.3, 0.5);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        if (shape.contains(y + 0.5, x + 0.5)) {
          for (std::size_t c = 0; c < 3; ++c) s.rgb.at(c, y, x) = col[c];
          s.depth.at(0, y, x) = depth;
        }
  }

  // Salient shape, drawn last so it is never occluded. Depth in [0.65, 0.95].
  const auto shape = detail::random_shape(rng, S, 0.25, 0.6);
  double col[3];
  detail::hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.75, 1.0), rng.uniform(0.75, 1.0), col);
  const double near = rng.uniform(0.7, 0.9);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (shape.contains(y + 0.5, x + 0.5)) {
        const double shade = 0.05 * ((y + 0.5 - shape.cy) / shape.ry);
        for (std::size_t c = 0; c < 3; ++c) s.rgb.at(c, y, x) = std::clamp(col[c] - std::abs(shade), 0.0, 1.0);
        s.depth.at(0, y, x) = near + shade;
        s.gt.at(0, y, x) = 1.0;
      }
  return s;
}

/// Writes `count` synthetic samples plus manifest.txt under root. Returns the manifest path.
inline fs::path gen_synthetic(const fs::path& root, std::size_t count, std::size_t size, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("gen_synthetic: count must be >= 1");
  if (size == 0 || size % 32 != 0) throw std::invalid_argument("gen_synthetic: size must be a positive multiple of 32");
  std::error_code ec;
  for (const char* sub : {"rgb", "depth", "gt"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw DataError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  std::ostringstream manifest;
  manifest << "# split=train\n";
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04zu", i);
    write_sample(root, synth_sample(size, derive_seed(seed, {i}), name));
    manifest << name << '\n';
  }
  const auto text = manifest.str();
  write_file(manifest_path(root), std::vector<std::uint8_t>(text.begin(), text.end()));
  return manifest_path(root);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  bool flip = false;
  std::size_t crop_side = 0;  // 0 = no crop
  std::size_t crop_y = 0, crop_x = 0;
  std::size_t quarter_turns = 0;  // counter-clockwise 90 degree rotations
};

/// Horizontal flip with p = 0.5, a crop to 90% of the side at a random
/// offset, and a rotation by a random multiple of 90 degrees.
inline AugmentParams sample_augment(Rng& rng, std::size_t side) {
  AugmentParams a;
  a.flip = rng.coin();
  a.crop_side = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(side)));
  a.crop_y = rng.below(side - a.crop_side + 1);
  a.crop_x = rng.below(side - a.crop_side + 1);
  a.quarter_turns = rng.below(4);
  return a;
}

namespace detail {

inline Image flip_h(const Image& im) {
  Image out(im.channels, im.height, im.width);
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) out.at(c, y, x) = im.at(c, y, im.width - 1 - x);
  return out;
}

inline Image crop(const Image& im, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  Image out(im.channels, h, w);
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
  return out;
}

inline Image rotate90(const Image& im) {
  Image out(im.channels, im.width, im.height);
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = im.at(c, x, im.width - 1 - y);
  return out;
}

inline Image apply_geometry(const Image& im, const AugmentParams& a) {
  Image out = a.flip ? flip_h(im) : im;
  if (a.crop_side && a.crop_side < im.height)
    out = resize_bilinear(crop(out, a.crop_y, a.crop_x, a.crop_side, a.crop_side), im.height, im.width);
  for (std::size_t t = 0; t < a.quarter_turns % 4; ++t) out = rotate90(out);
  return out;
}

}  // namespace detail

/// Applies one geometric transform to rgb, depth and gt alike; gt is
/// re-binarized at 0.5 afterwards.
inline SamplePair augment(const SamplePair& s, const AugmentParams& a) {
  SamplePair out;
  out.name = s.name;
  out.rgb = detail::apply_geometry(s.rgb, a);
  out.depth = detail::apply_geometry(s.depth, a);
  out.gt = detail::apply_geometry(s.gt, a);
  for (double& v : out.gt.data) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

inline SamplePair augment(const SamplePair& s, std::uint64_t seed) {
  Rng rng(seed);
  return augment(s, sample_augment(rng, s.rgb.height));
}

/// Bilinear for rgb/depth, nearest for gt.
inline SamplePair resize_input(const SamplePair& s, std::size_t target) {
  if (target == 0 || target % 32 != 0) throw std::invalid_argument("resize_input: target must be a multiple of 32");
  SamplePair out;
  out.name = s.name;
  out.rgb = resize_bilinear(s.rgb, target, target);
  out.depth = resize_bilinear(s.depth, target, target);
  out.gt = resize_nearest(s.gt, target, target);
  return out;
}

}  // namespace gtn
