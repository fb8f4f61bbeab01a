#ifndef IRN_IMAGE_HPP
#define IRN_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "irn/common.hpp"

namespace irn {

// File / image errors (missing file, unsupported encodings).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit RGB image, interleaved row-major (the storage form).
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;  // height * width * 3

  uint8_t& at(int y, int x, int c) { return data[(y * width + x) * 3 + c]; }
  uint8_t at(int y, int x, int c) const { return data[(y * width + x) * 3 + c]; }
};

// Float RGB image, values nominally in [0,1] (the compute form).
struct ImageF {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // height * width * 3

  float& at(int y, int x, int c) { return data[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(y * width + x) * 3 + c]; }
};

// Single-channel plane (e.g. BT.601 luma), double precision for metric math.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> v;  // height * width

  double at(int y, int x) const { return v[y * width + x]; }
};

// 8-bit RGB or grayscale PNG; grayscale is expanded to R=G=B, an alpha
// channel is dropped. 16-bit and palette files are rejected.
ImageU8 load_png(const std::string& path);
void save_png(const ImageU8& img, const std::string& path);

ImageF to_float(const ImageU8& img);
// clip(round(v*255), 0, 255), round half away from zero. NaN clamps to 0 and
// bumps nan_clamp_count().
ImageU8 from_float(const ImageF& img);
uint64_t nan_clamp_count();

// BT.601 studio-range luma on the 0-255 scale: 65.481 R + 128.553 G + 24.966 B + 16
// for RGB in [0,1]; black maps to 16, white to 235.
Plane rgb_to_y(const ImageF& img);

// Keys cubic kernel, a = -0.5.
double bicubic_kernel(double t);

// Separable cubic resampling in the MATLAB imresize convention: when
// downscaling with antialias the kernel support is stretched by the inverse
// scale; boundary samples are clamped to the edge; each output pixel's weight
// set is normalized to sum to 1.
ImageF bicubic_resize(const ImageF& img, int out_h, int out_w, bool antialias = true);

ImageF flip_horizontal(const ImageF& img);
ImageF flip_vertical(const ImageF& img);

}  // namespace irn

#endif
