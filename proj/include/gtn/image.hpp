#pragma once

// Planar float images and binary PPM (P6) / PGM (P5) codecs.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtn/tensor.hpp"

namespace gtn {

/// Malformed or unreadable input data. Carries the byte offset where decoding failed, if any.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::ptrdiff_t offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what), offset_(offset) {}
  std::ptrdiff_t offset() const { return offset_; }

 private:
  std::ptrdiff_t offset_;
};

/// C planes of H x W values, channel-major.
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }
  bool operator==(const Image&) const = default;
};

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// P5 for one channel, P6 for three; 8-bit, maxval 255.
inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("encode_pnm: only 1- or 3-channel images are supported");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.data.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.push_back(quantize8(img.at(c, y, x)));
  return out;
}

inline Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(source + ": " + msg, static_cast<std::ptrdiff_t>(pos));
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw fail("not a binary PGM/PPM file (expected magic P5 or P6)");
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  auto skip_space = [&] {
    for (;;) {
      if (pos < bytes.size() && std::isspace(bytes[pos])) {
        ++pos;
      } else if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(std::string("malformed header: expected ") + what);
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw fail(std::string("malformed header: ") + what + " too large");
    }
    return static_cast<std::size_t>(v);
  };
  const std::size_t width = read_uint("width");
  const std::size_t height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (width == 0 || height == 0) throw fail("malformed header: zero image dimension");
  if (maxval == 0 || maxval > 65535) throw fail("malformed header: maxval out of range");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("malformed header: missing separator");
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = width * height * channels * bps;
  if (bytes.size() - pos < need) {
    pos = bytes.size();
    throw fail("truncated payload: need " + std::to_string(need) + " bytes");
  }
  Image img(channels, height, width);
  const auto maxv = static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t v = bytes[pos++];
        if (bps == 2) v = (v << 8) | bytes[pos++];
        if (v > maxval) {
          --pos;
          throw fail("sample exceeds maxval");
        }
        img.at(c, y, x) = static_cast<double>(v) / maxv;  // divide: k/255 exactly, not k*(1/255)
      }
  return img;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path), path.string()); }
inline void write_pnm(const std::filesystem::path& path, const Image& img) { write_file(path, encode_pnm(img)); }

/// Bilinear resize (half-pixel centres) of every plane to h x w.
inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
  if (src.height == h && src.width == w) return src;
  Image out(src.channels, h, w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), src.height - 1);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), src.width - 1);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = (1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        const double bot = (1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        out.at(c, y, x) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

/// Nearest-neighbour resize sampling the source pixel under each output pixel centre.
inline Image resize_nearest(const Image& src, std::size_t h, std::size_t w) {
  if (src.height == h && src.width == w) return src;
  Image out(src.channels, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * h));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * w));
      for (std::size_t c = 0; c < src.channels; ++c) out.at(c, y, x) = src.at(c, sy, sx);
    }
  }
  return out;
}

/// Stacks equally sized images into an N x C x H x W tensor.
inline Tensor to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: empty batch");
  const Image& ref = *images.front();
  std::vector<double> v;
  v.reserve(images.size() * ref.data.size());
  for (const Image* im : images) {
    if (im->channels != ref.channels || im->height != ref.height || im->width != ref.width)
      throw ShapeError("to_tensor: images in a batch must share one shape");
    v.insert(v.end(), im->data.begin(), im->data.end());
  }
  return Tensor::from({images.size(), ref.channels, ref.height, ref.width}, std::move(v));
}

inline Tensor to_tensor(const Image& img) { return to_tensor(std::vector<const Image*>{&img}); }

/// Item `n` of an N x C x H x W tensor as an image.
inline Image to_image(const Tensor& t, std::size_t n = 0) {
  if (t.rank() != 4) throw ShapeError("to_image: expected N x C x H x W, got " + to_string(t.shape()));
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const auto src = t.data().subspan(n * img.data.size(), img.data.size());
  std::copy(src.begin(), src.end(), img.data.begin());
  return img;
}

}  // namespace gtn
