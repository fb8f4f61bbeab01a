#ifndef IRN_DATASET_HPP
#define IRN_DATASET_HPP

#include <string>
#include <vector>

#include "irn/common.hpp"
#include "irn/image.hpp"

namespace irn {

struct DatasetSpec {
  std::string directory;
  std::string glob = "*.png";
  int patch_size = 144;
  bool hflip = true;
  bool vflip = true;
  uint64_t seed = 0;
};

// In-memory training corpus. Images smaller than the patch size are skipped
// at load time with a warning on stderr.
class PatchSource {
 public:
  static PatchSource from_directory(const DatasetSpec& spec);
  static PatchSource from_images(std::vector<ImageF> images, const DatasetSpec& spec);

  size_t size() const { return images_.size(); }
  const ImageF& image(size_t i) const { return images_.at(i); }
  size_t skipped() const { return skipped_; }
  const DatasetSpec& spec() const { return spec_; }

  // Uniformly positioned crop of the indexed image, each enabled flip applied
  // with probability 1/2. Deterministic under a fixed rng state.
  ImageF sample_patch(size_t image_index, Rng& rng) const;

 private:
  DatasetSpec spec_;
  std::vector<ImageF> images_;
  size_t skipped_ = 0;
};

// Deterministic procedural texture: low-frequency gradients, sinusoidal
// gratings of random orientation and frequency, and sharp random rectangles.
// Values in [0,1]; dims >= 16.
ImageF synth_texture(uint64_t seed, int h, int w);

// count textures with seeds seed_base .. seed_base+count-1.
std::vector<ImageF> synth_corpus(uint64_t seed_base, int count, int size);

}  // namespace irn

#endif
