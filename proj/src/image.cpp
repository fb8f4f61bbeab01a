#include "irn/image.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <memory>

namespace irn {

namespace {

std::atomic<uint64_t> g_nan_clamps{0};

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

uint64_t nan_clamp_count() { return g_nan_clamps.load(); }

ImageU8 load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open PNG file: " + path);

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG file: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported bit depth (16) in " + path);
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported palette PNG: " + path);
  }

  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.width = static_cast<int>(png_get_image_width(png, info));
  const size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(static_cast<size_t>(img.height) * rowbytes);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img.data.assign(raw.begin(), raw.begin() + static_cast<size_t>(img.height) * img.width * 3);
  return img;
}

void save_png(const ImageU8& img, const std::string& path) {
  IRN_REQUIRE(img.height > 0 && img.width > 0 &&
                  img.data.size() == static_cast<size_t>(img.height) * img.width * 3,
              "save_png: malformed image ", img.width, "x", img.height, " with ",
              img.data.size(), " bytes");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write PNG file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageF to_float(const ImageU8& img) {
  ImageF out;
  out.height = img.height;
  out.width = img.width;
  out.data.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] / 255.0f;
  return out;
}

ImageU8 from_float(const ImageF& img) {
  ImageU8 out;
  out.height = img.height;
  out.width = img.width;
  out.data.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    float v = img.data[i];
    if (std::isnan(v)) {
      g_nan_clamps.fetch_add(1, std::memory_order_relaxed);
      out.data[i] = 0;
      continue;
    }
    double r = std::round(static_cast<double>(v) * 255.0);  // half away from zero
    out.data[i] = static_cast<uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
  }
  return out;
}

Plane rgb_to_y(const ImageF& img) {
  Plane p;
  p.height = img.height;
  p.width = img.width;
  p.v.resize(static_cast<size_t>(img.height) * img.width);
  for (size_t i = 0; i < p.v.size(); ++i) {
    double r = img.data[3 * i], g = img.data[3 * i + 1], b = img.data[3 * i + 2];
    p.v[i] = 65.481 * r + 128.553 * g + 24.966 * b + 16.0;
  }
  return p;
}

double bicubic_kernel(double t) {
  double a = std::abs(t);
  if (a <= 1.0) return (1.5 * a - 2.5) * a * a + 1.0;
  if (a <= 2.0) return ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0;
  return 0.0;
}

namespace {

// One output sample's source window after edge clamping: weights for
// consecutive input indices [start, start + w.size()).
struct Window {
  int start = 0;
  std::vector<double> w;
};

std::vector<Window> build_windows(int in, int out, bool antialias) {
  const double scale = static_cast<double>(out) / in;
  const bool shrink = antialias && scale < 1.0;
  const double kscale = shrink ? scale : 1.0;
  const double support = 2.0 / kscale;
  std::vector<Window> wins(out);
  for (int i = 0; i < out; ++i) {
    const double u = (i + 0.5) / scale - 0.5;
    int lo = static_cast<int>(std::floor(u - support)) + 1;
    int hi = static_cast<int>(std::floor(u + support));
    int clo = std::clamp(lo, 0, in - 1);
    int chi = std::clamp(hi, 0, in - 1);
    Window win;
    win.start = clo;
    win.w.assign(static_cast<size_t>(chi - clo + 1), 0.0);
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      double wt = bicubic_kernel((u - j) * kscale);
      win.w[std::clamp(j, 0, in - 1) - clo] += wt;  // edge replication
      total += wt;
    }
    for (double& wt : win.w) wt /= total;
    wins[i] = std::move(win);
  }
  return wins;
}

}  // namespace

ImageF bicubic_resize(const ImageF& img, int out_h, int out_w, bool antialias) {
  IRN_REQUIRE(out_h > 0 && out_w > 0, "bicubic_resize: target size must be positive, got ",
              out_w, "x", out_h);
  IRN_REQUIRE(img.height > 0 && img.width > 0, "bicubic_resize: empty input image");
  const auto rows = build_windows(img.height, out_h, antialias);
  const auto cols = build_windows(img.width, out_w, antialias);

  // vertical pass
  std::vector<double> tmp(static_cast<size_t>(out_h) * img.width * 3);
  for (int y = 0; y < out_h; ++y) {
    const auto& win = rows[y];
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (size_t k = 0; k < win.w.size(); ++k)
          acc += win.w[k] * img.at(win.start + static_cast<int>(k), x, c);
        tmp[(static_cast<size_t>(y) * img.width + x) * 3 + c] = acc;
      }
  }
  // horizontal pass
  ImageF out;
  out.height = out_h;
  out.width = out_w;
  out.data.resize(static_cast<size_t>(out_h) * out_w * 3);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto& win = cols[x];
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (size_t k = 0; k < win.w.size(); ++k)
          acc += win.w[k] * tmp[(static_cast<size_t>(y) * img.width + win.start + k) * 3 + c];
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  return out;
}

ImageF flip_horizontal(const ImageF& img) {
  ImageF out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

ImageF flip_vertical(const ImageF& img) {
  ImageF out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height - 1 - y, x, c);
  return out;
}

}  // namespace irn
