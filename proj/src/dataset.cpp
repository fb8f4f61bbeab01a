#include "irn/dataset.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

namespace irn {

PatchSource PatchSource::from_directory(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  IRN_REQUIRE(fs::is_directory(spec.directory), "dataset directory not found: ", spec.directory);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(spec.directory)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (fnmatch(spec.glob.c_str(), name.c_str(), 0) == 0) files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());

  std::vector<ImageF> images;
  size_t skipped = 0;
  for (const auto& f : files) {
    ImageF img = to_float(load_png(f));
    if (img.height < spec.patch_size || img.width < spec.patch_size) {
      std::cerr << "warning: skipping undersized image " << f << " (" << img.width << "x"
                << img.height << " < patch " << spec.patch_size << ")\n";
      ++skipped;
      continue;
    }
    images.push_back(std::move(img));
  }
  auto src = from_images(std::move(images), spec);
  src.skipped_ = skipped;
  return src;
}

PatchSource PatchSource::from_images(std::vector<ImageF> images, const DatasetSpec& spec) {
  PatchSource src;
  src.spec_ = spec;
  for (auto& img : images) {
    if (img.height < spec.patch_size || img.width < spec.patch_size) {
      std::cerr << "warning: skipping undersized image (" << img.width << "x" << img.height
                << " < patch " << spec.patch_size << ")\n";
      ++src.skipped_;
      continue;
    }
    src.images_.push_back(std::move(img));
  }
  return src;
}

ImageF PatchSource::sample_patch(size_t image_index, Rng& rng) const {
  const ImageF& img = images_.at(image_index);
  const int p = spec_.patch_size;
  const int y0 = static_cast<int>(rng.uniform_int(img.height - p + 1));
  const int x0 = static_cast<int>(rng.uniform_int(img.width - p + 1));
  ImageF patch;
  patch.height = p;
  patch.width = p;
  patch.data.resize(static_cast<size_t>(p) * p * 3);
  for (int y = 0; y < p; ++y)
    std::copy(&img.data[((y0 + y) * static_cast<size_t>(img.width) + x0) * 3],
              &img.data[((y0 + y) * static_cast<size_t>(img.width) + x0 + p) * 3],
              &patch.data[y * static_cast<size_t>(p) * 3]);
  if (spec_.hflip && rng.uniform() < 0.5) patch = flip_horizontal(patch);
  if (spec_.vflip && rng.uniform() < 0.5) patch = flip_vertical(patch);
  return patch;
}

ImageF synth_texture(uint64_t seed, int h, int w) {
  IRN_REQUIRE(h >= 16 && w >= 16, "synth_texture: dims must be >= 16, got ", w, "x", h);
  Rng rng(seed, 0x7e47);
  ImageF img;
  img.height = h;
  img.width = w;
  img.data.resize(static_cast<size_t>(h) * w * 3);

  // smooth base: per-channel linear ramp
  double gx[3], gy[3], off[3];
  for (int c = 0; c < 3; ++c) {
    gx[c] = rng.uniform(-0.5, 0.5);
    gy[c] = rng.uniform(-0.5, 0.5);
    off[c] = rng.uniform(0.25, 0.75);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(off[c] + gx[c] * x / w + gy[c] * y / h);

  // sinusoidal gratings, random orientation/frequency/phase; the top of the
  // frequency range sits above the downscaled Nyquist so the corpus carries
  // content a plain low-pass resampler cannot round-trip
  const int n_gratings = 3 + static_cast<int>(rng.uniform_int(3));
  for (int g = 0; g < n_gratings; ++g) {
    double angle = rng.uniform(0.0, M_PI);
    double cyc_per_px = g == 0 ? rng.uniform(0.02, 0.1) : rng.uniform(0.1, 0.42);
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double amp[3];
    for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(0.04, 0.16);
    const double kx = std::cos(angle) * cyc_per_px * 2.0 * M_PI;
    const double ky = std::sin(angle) * cyc_per_px * 2.0 * M_PI;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = std::sin(kx * x + ky * y + phase);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) += static_cast<float>(amp[c] * s);
      }
  }

  // sharp rectangles, including thin bars with hard step edges
  const int n_rects = 8 + static_cast<int>(rng.uniform_int(5));
  for (int r = 0; r < n_rects; ++r) {
    const bool thin = r % 3 == 0;
    int rw, rh;
    if (thin && rng.uniform() < 0.5) {
      rw = 1 + static_cast<int>(rng.uniform_int(3));
      rh = h / 8 + static_cast<int>(rng.uniform_int(std::max(2, h / 2)));
    } else if (thin) {
      rw = w / 8 + static_cast<int>(rng.uniform_int(std::max(2, w / 2)));
      rh = 1 + static_cast<int>(rng.uniform_int(3));
    } else {
      rw = w / 20 + static_cast<int>(rng.uniform_int(std::max(2, w / 4)));
      rh = h / 20 + static_cast<int>(rng.uniform_int(std::max(2, h / 4)));
    }
    int x0 = static_cast<int>(rng.uniform_int(std::max(1, w - rw)));
    int y0 = static_cast<int>(rng.uniform_int(std::max(1, h - rh)));
    float col[3];
    for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(0.05, 0.95));
    for (int y = y0; y < std::min(h, y0 + rh); ++y)
      for (int x = x0; x < std::min(w, x0 + rw); ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
  }

  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::vector<ImageF> synth_corpus(uint64_t seed_base, int count, int size) {
  std::vector<ImageF> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synth_texture(seed_base + i, size, size));
  return out;
}

}  // namespace irn
