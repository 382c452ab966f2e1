#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poseadapt/geometry.hpp"
#include "poseadapt/tensor.hpp"

namespace poseadapt {

// Planar floating-point raster, values nominally in [0,1].
struct Image {
  std::size_t w = 0, h = 0, c = 0;
  std::vector<double> pix;  // [c][h][w]

  Image() = default;
  Image(std::size_t w_, std::size_t h_, std::size_t c_, double fill = 0.0)
      : w(w_), h(h_), c(c_), pix(w_ * h_ * c_, fill) {}

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return pix[(ch * h + y) * w + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const {
    return pix[(ch * h + y) * w + x];
  }
};

inline Tensor image_to_tensor(const Image& img) {
  return Tensor({img.c, img.h, img.w}, img.pix);
}

// ---------------------------------------------------------------------------
// PGM (P5, grayscale) / PPM (P6, RGB) binary IO at 8 bits.
// ---------------------------------------------------------------------------

inline void write_pnm(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw std::invalid_argument("write_pnm: 1 or 3 channels only");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pnm: cannot open " + path);
  os << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(img.w * img.c);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        row[x * img.c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("write_pnm: write failed for " + path);
}

inline Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pnm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") throw std::runtime_error("read_pnm: bad magic in " + path);
  // Skip whitespace and '#' comment lines between header tokens.
  auto next_int = [&is, &path]() {
    for (;;) {
      int ch = is.peek();
      if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(ch)) {
        is.get();
      } else {
        break;
      }
    }
    std::size_t v = 0;
    if (!(is >> v)) throw std::runtime_error("read_pnm: truncated header in " + path);
    return v;
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_pnm: only maxval 255 supported");
  is.get();  // single whitespace after maxval

  const std::size_t c = magic == "P5" ? 1 : 3;
  Image img(w, h, c);
  std::vector<unsigned char> raw(w * h * c);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw std::runtime_error("read_pnm: truncated pixel data in " + path);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        img.at(ch, y, x) = raw[(y * w + x) * c + ch] / 255.0;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Plain (non-autodiff) raster operations used by augmentation and rendering.
// ---------------------------------------------------------------------------

// Bilinear warp with zero padding; map sends destination pixels to source
// locations.
inline Image warp_image(const Image& src, const Affine2& dest_to_src) {
  Image out(src.w, src.h, src.c);
  for (std::size_t y = 0; y < src.h; ++y) {
    for (std::size_t x = 0; x < src.w; ++x) {
      const Vec2 s = dest_to_src.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx = std::floor(s.x), fy = std::floor(s.y);
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      const double ax = s.x - fx, ay = s.y - fy;
      for (std::size_t ch = 0; ch < src.c; ++ch) {
        double v = 0.0;
        for (int q = 0; q < 4; ++q) {
          const long xi = x0 + (q & 1), yi = y0 + (q >> 1);
          if (xi < 0 || xi >= static_cast<long>(src.w) || yi < 0 ||
              yi >= static_cast<long>(src.h)) {
            continue;
          }
          const double wq = ((q & 1) ? ax : 1 - ax) * ((q >> 1) ? ay : 1 - ay);
          v += wq * src.at(ch, static_cast<std::size_t>(yi), static_cast<std::size_t>(xi));
        }
        out.at(ch, y, x) = v;
      }
    }
  }
  return out;
}

// Separable Gaussian blur, clamp-to-edge, kernel radius ceil(3 sigma).
inline Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[i + radius];
  }
  for (double& kv : kernel) kv /= norm;

  Image tmp(src.w, src.h, src.c), out(src.w, src.h, src.c);
  const long w = static_cast<long>(src.w), h = static_cast<long>(src.h);
  for (std::size_t ch = 0; ch < src.c; ++ch) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double v = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long xi = std::clamp(x + i, 0L, w - 1);
          v += kernel[i + radius] * src.at(ch, y, xi);
        }
        tmp.at(ch, y, x) = v;
      }
    }
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double v = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const long yi = std::clamp(y + i, 0L, h - 1);
          v += kernel[i + radius] * tmp.at(ch, yi, x);
        }
        out.at(ch, y, x) = v;
      }
    }
  }
  return out;
}

// out = (in - 0.5) * contrast + 0.5 + brightness, clamped to [0,1].
inline Image adjust_photometric(const Image& src, double brightness, double contrast) {
  Image out(src.w, src.h, src.c);
  for (std::size_t i = 0; i < src.pix.size(); ++i) {
    out.pix[i] = std::clamp((src.pix[i] - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0);
  }
  return out;
}

}  // namespace poseadapt
