#ifndef IRN_MODEL_HPP
#define IRN_MODEL_HPP

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irn/common.hpp"
#include "irn/image.hpp"
#include "irn/tensor.hpp"

namespace irn {

template <class T>
struct NamedParam {
  std::string name;
  TensorT<T>* tensor;
};

// Orthonormal 2x2 Haar transform. Per input channel the four output planes
// are, for a 2x2 block (a b / c d):
//   LL = (a+b+c+d)/2   LH = (a-b+c-d)/2   HL = (a+b-c-d)/2   HH = (a-b-c+d)/2
// grouped as all LL planes first, then the LH, HL, HH groups. The transform
// matrix is orthonormal and symmetric, so the inverse is the same map and
// energy is conserved exactly. Both directions are differentiable.
template <class T>
TensorT<T> haar_forward(const TensorT<T>& x);
template <class T>
TensorT<T> haar_inverse(const TensorT<T>& x);

// 8-bit quantization with straight-through gradients: forward is
// clip(round(v*255), 0, 255)/255 (round half away from zero), backward passes
// the upstream gradient through unchanged, including in the clipped region.
template <class T>
TensorT<T> quantize_ste(const TensorT<T>& y);

// i.i.d. Normal(0, alpha^2) tensor; deterministic under a fixed rng state.
template <class T>
TensorT<T> sample_latent(Shape shape, T alpha, Rng& rng);

// Five 3x3 convolutions with dense connectivity: layer i consumes
// in_channels + i*growth channels, leaky-relu(0.2) after the first four, and
// the final projection to out_channels starts at zero so a fresh block is the
// zero function.
template <class T>
struct DenseBlockT {
  int in_channels = 0, out_channels = 0, growth = 0;
  std::vector<TensorT<T>> weights;  // 5
  std::vector<TensorT<T>> biases;   // 5

  DenseBlockT(int in_ch, int out_ch, int growth_, Rng& rng);
  TensorT<T> forward(const TensorT<T>& x) const;
  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
  // Re-init every conv (including the final one) with N(0, scale*sqrt(2/fan_in)).
  void randomize_all(Rng& rng, T scale);
};

// Coupling block: additive update on the low-frequency branch, affine update
// on the high-frequency branch with a bounded log-scale,
//   h1' = h1 + phi(h2)
//   h2' = h2 * exp(r(h1')) + eta(h1'),   r = s*(2*sigmoid(rho(.)) - 1)
// so every multiplicative factor lies in [exp(-s), exp(s)]. The inverse
// rewinds the two steps exactly; a freshly constructed block is the identity.
template <class T>
struct InvBlockT {
  int c_low = 0, c_high = 0;
  T clamp_scale = T(1);
  DenseBlockT<T> phi;  // c_high -> c_low
  DenseBlockT<T> eta;  // c_low -> c_high
  DenseBlockT<T> rho;  // c_low -> c_high

  InvBlockT(int c_low_, int c_high_, int growth, Rng& rng, T clamp_scale_ = T(1));

  static TensorT<T> bounded_log_scale(const TensorT<T>& rho_logits, T s);

  std::pair<TensorT<T>, TensorT<T>> forward(const TensorT<T>& h1, const TensorT<T>& h2) const;
  std::pair<TensorT<T>, TensorT<T>> inverse(const TensorT<T>& h1p, const TensorT<T>& h2p) const;
  void collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out);
  void randomize_all(Rng& rng, T scale);
};

// The invertible rescaling network: one downscaling module (Haar layer + K
// coupling blocks) per factor of 2. The low branch is always the 3 channels
// derived from the image's LL planes; everything else is the high branch.
// forward maps an image batch to (y, z); inverse is the exact algebraic
// inverse (no clipping inside the math path).
template <class T>
class IrnModelT {
 public:
  IrnModelT(int scale, int blocks_per_module, int growth, Rng& rng, T clamp_scale = T(1));

  int scale() const { return scale_; }
  int levels() const { return levels_; }
  int blocks_per_module() const { return blocks_; }
  int growth() const { return growth_; }
  T clamp_scale() const { return clamp_; }
  int64_t z_channels() const;
  Shape z_shape(int64_t batch, int64_t hr_h, int64_t hr_w) const;

  std::pair<TensorT<T>, TensorT<T>> forward(const TensorT<T>& x) const;
  TensorT<T> inverse(const TensorT<T>& y, const TensorT<T>& z) const;

  std::vector<NamedParam<T>> params();
  void set_requires_grad(bool b);
  void zero_grad();
  void randomize_all(Rng& rng, T scale = T(0.1));

 private:
  int scale_, levels_, blocks_, growth_;
  T clamp_;
  std::vector<std::vector<InvBlockT<T>>> modules_;
};

using IrnModel = IrnModelT<float>;

// Image <-> tensor bridges (NCHW, batch of same-sized RGB images).
template <class T>
TensorT<T> images_to_tensor(std::span<const ImageF> images);
template <class T>
TensorT<T> image_to_tensor(const ImageF& img);
// One batch item back to an image; values clipped to [0,1] at this boundary.
template <class T>
ImageF tensor_to_image(const TensorT<T>& t, int64_t batch_index = 0);

}  // namespace irn

#endif
