// Copyright 2026 The mnsp-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "mnsp/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mnsp/bicubic.hpp"

namespace mnsp {

Image resize_bicubic(const Image& src, size_t oh, size_t ow) {
  if (src.h == 0 || src.w == 0) throw ContractError("resize: empty image");
  if (oh == src.h && ow == src.w) return src;
  const Taps1D tr = bicubic_taps(src.h, oh);
  const Taps1D tc = bicubic_taps(src.w, ow);
  // horizontal pass
  Image mid(src.h, ow, src.c);
  for (size_t r = 0; r < src.h; ++r) {
    for (size_t o = 0; o < ow; ++o) {
      for (size_t ch = 0; ch < src.c; ++ch) {
        double acc = 0;
        for (int k = 0; k < 4; ++k)
          acc += tc.w[4 * o + k] * src.at(r, size_t(tc.idx[4 * o + k]), ch);
        mid.at(r, o, ch) = acc;
      }
    }
  }
  // vertical pass
  Image out(oh, ow, src.c);
  for (size_t o = 0; o < oh; ++o) {
    for (size_t col = 0; col < ow; ++col) {
      for (size_t ch = 0; ch < src.c; ++ch) {
        double acc = 0;
        for (int k = 0; k < 4; ++k)
          acc += tr.w[4 * o + k] * mid.at(size_t(tr.idx[4 * o + k]), col, ch);
        out.at(o, col, ch) = acc;
      }
    }
  }
  clamp01(out);
  return out;
}

Image crop(const Image& src, size_t top, size_t left, size_t ch, size_t cw) {
  if (top + ch > src.h || left + cw > src.w) throw ContractError("crop out of bounds");
  Image out(ch, cw, src.c);
  for (size_t r = 0; r < ch; ++r)
    for (size_t col = 0; col < cw; ++col)
      for (size_t k = 0; k < src.c; ++k) out.at(r, col, k) = src.at(top + r, left + col, k);
  return out;
}

Image rotate(const Image& src, double degrees, double bg) {
  if (degrees == 0.0) return src;
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = 0.5 * double(src.h - 1), cx = 0.5 * double(src.w - 1);
  Image out(src.h, src.w, src.c);
  for (size_t r = 0; r < src.h; ++r) {
    for (size_t col = 0; col < src.w; ++col) {
      // inverse map: rotate the destination coordinate back into the source
      const double dy = double(r) - cy, dx = double(col) - cx;
      const double sy = cy + (sn * dx + cs * dy);
      const double sx = cx + (cs * dx - sn * dy);
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ay = sy - fy, ax = sx - fx;
      for (size_t k = 0; k < src.c; ++k) {
        auto sample = [&](double yy, double xx) -> double {
          if (yy < 0 || xx < 0 || yy >= double(src.h) || xx >= double(src.w)) return bg;
          return src.at(size_t(yy), size_t(xx), k);
        };
        const double v00 = sample(fy, fx), v01 = sample(fy, fx + 1);
        const double v10 = sample(fy + 1, fx), v11 = sample(fy + 1, fx + 1);
        out.at(r, col, k) = (1 - ay) * ((1 - ax) * v00 + ax * v01) +
                            ay * ((1 - ax) * v10 + ax * v11);
      }
    }
  }
  return out;
}

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& x : k) x /= sum;
  auto clampi = [](long v, long lo, long hi) { return v < lo ? lo : (v > hi ? hi : v); };
  Image mid(src.h, src.w, src.c);
  for (size_t r = 0; r < src.h; ++r)
    for (size_t col = 0; col < src.w; ++col)
      for (size_t ch = 0; ch < src.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] *
                 src.at(r, size_t(clampi(long(col) + i, 0, long(src.w) - 1)), ch);
        mid.at(r, col, ch) = acc;
      }
  Image out(src.h, src.w, src.c);
  for (size_t r = 0; r < src.h; ++r)
    for (size_t col = 0; col < src.w; ++col)
      for (size_t ch = 0; ch < src.c; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] *
                 mid.at(size_t(clampi(long(r) + i, 0, long(src.h) - 1)), col, ch);
        out.at(r, col, ch) = acc;
      }
  return out;
}

Image adjust_brightness_contrast(const Image& src, double brightness, double contrast) {
  Image out = src;
  for (double& p : out.px) p = (p - 0.5) * contrast + 0.5 + brightness;
  clamp01(out);
  return out;
}

Image add_gaussian_noise(const Image& src, double sigma, Rng& rng) {
  Image out = src;
  for (double& p : out.px) p += sigma * rng.normal();
  clamp01(out);
  return out;
}

void clamp01(Image& img) {
  for (double& p : img.px) p = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
}

Array<double> patchify(const Image& img, size_t patch) {
  if (patch == 0 || img.h % patch != 0 || img.w % patch != 0)
    throw InputError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                     " not divisible by patch " + std::to_string(patch));
  const size_t gr = img.h / patch, gc = img.w / patch;
  const size_t width = patch * patch * img.c;
  Array<double> out({gr * gc, width});
  for (size_t pr = 0; pr < gr; ++pr)
    for (size_t pc = 0; pc < gc; ++pc) {
      double* dst = out.data() + (pr * gc + pc) * width;
      size_t i = 0;
      for (size_t r = 0; r < patch; ++r)
        for (size_t col = 0; col < patch; ++col)
          for (size_t ch = 0; ch < img.c; ++ch)
            dst[i++] = img.at(pr * patch + r, pc * patch + col, ch);
    }
  return out;
}

Array<double> standardize_rows(const Array<double>& x, double eps) {
  Array<double> out = x;
  const size_t rows = x.rows(), cols = x.cols();
  for (size_t r = 0; r < rows; ++r) {
    double* p = out.data() + r * cols;
    double mu = 0;
    for (size_t j = 0; j < cols; ++j) mu += p[j];
    mu /= double(cols);
    double var = 0;
    for (size_t j = 0; j < cols; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= double(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < cols; ++j) p[j] = (p[j] - mu) * inv;
  }
  return out;
}

void write_pnm(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw ContractError("write_pnm: 1 or 3 channels only");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> buf(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    double v = img.px[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    buf[i] = (unsigned char)(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!f) throw IoError("short write: " + path);
}

namespace {
// Skip PNM whitespace and '#' comments.
int pnm_token(std::istream& in) {
  int ch = in.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
    }
    ch = in.get();
  }
  int v = 0;
  bool any = false;
  while (std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw InputError("malformed PNM header");
  return v;
}
}  // namespace

Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char m0 = char(f.get()), m1 = char(f.get());
  size_t channels;
  if (m0 == 'P' && m1 == '5') {
    channels = 1;
  } else if (m0 == 'P' && m1 == '6') {
    channels = 3;
  } else {
    throw InputError("unsupported image format (want PGM P5 or PPM P6): " + path);
  }
  const size_t w = size_t(pnm_token(f));
  const size_t h = size_t(pnm_token(f));
  const size_t maxval = size_t(pnm_token(f));
  if (maxval == 0 || maxval > 255) throw InputError("unsupported PNM maxval: " + path);
  Image img(h, w, channels);
  std::vector<unsigned char> buf(h * w * channels);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (size_t(f.gcount()) != buf.size()) throw InputError("truncated PNM data: " + path);
  for (size_t i = 0; i < buf.size(); ++i) img.px[i] = double(buf[i]) / double(maxval);
  return img;
}

}  // namespace mnsp
