#include "irn/model.hpp"

#include <algorithm>
#include <cmath>

namespace irn {

namespace {

// value = 0.5*(a+b+c+d | a-b+c-d | a+b-c-d | a-b-c+d), grouped LL,LH,HL,HH
template <class T>
std::vector<T> haar_fwd_kernel(const T* in, int64_t N, int64_t C, int64_t H, int64_t W) {
  const int64_t Hh = H / 2, Wh = W / 2;
  std::vector<T> out(N * 4 * C * Hh * Wh);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = in + (n * C + c) * H * W;
      T* ll = out.data() + ((n * 4 * C) + c) * Hh * Wh;
      T* lh = out.data() + ((n * 4 * C) + C + c) * Hh * Wh;
      T* hl = out.data() + ((n * 4 * C) + 2 * C + c) * Hh * Wh;
      T* hh = out.data() + ((n * 4 * C) + 3 * C + c) * Hh * Wh;
      for (int64_t y = 0; y < Hh; ++y)
        for (int64_t x = 0; x < Wh; ++x) {
          const T a = src[(2 * y) * W + 2 * x];
          const T b = src[(2 * y) * W + 2 * x + 1];
          const T cc = src[(2 * y + 1) * W + 2 * x];
          const T d = src[(2 * y + 1) * W + 2 * x + 1];
          ll[y * Wh + x] = T(0.5) * (a + b + cc + d);
          lh[y * Wh + x] = T(0.5) * (a - b + cc - d);
          hl[y * Wh + x] = T(0.5) * (a + b - cc - d);
          hh[y * Wh + x] = T(0.5) * (a - b - cc + d);
        }
    }
  return out;
}

template <class T>
std::vector<T> haar_inv_kernel(const T* in, int64_t N, int64_t C4, int64_t Hh, int64_t Wh) {
  const int64_t C = C4 / 4, H = Hh * 2, W = Wh * 2;
  std::vector<T> out(N * C * H * W);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* ll = in + ((n * C4) + c) * Hh * Wh;
      const T* lh = in + ((n * C4) + C + c) * Hh * Wh;
      const T* hl = in + ((n * C4) + 2 * C + c) * Hh * Wh;
      const T* hh = in + ((n * C4) + 3 * C + c) * Hh * Wh;
      T* dst = out.data() + (n * C + c) * H * W;
      for (int64_t y = 0; y < Hh; ++y)
        for (int64_t x = 0; x < Wh; ++x) {
          const T l = ll[y * Wh + x], m = lh[y * Wh + x];
          const T p = hl[y * Wh + x], q = hh[y * Wh + x];
          dst[(2 * y) * W + 2 * x] = T(0.5) * (l + m + p + q);
          dst[(2 * y) * W + 2 * x + 1] = T(0.5) * (l - m + p - q);
          dst[(2 * y + 1) * W + 2 * x] = T(0.5) * (l + m - p - q);
          dst[(2 * y + 1) * W + 2 * x + 1] = T(0.5) * (l - m - p + q);
        }
    }
  return out;
}

}  // namespace

template <class T>
TensorT<T> haar_forward(const TensorT<T>& x) {
  IRN_REQUIRE(x.ndim() == 4, "haar_forward: input must be NCHW, got ", shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  IRN_REQUIRE(H % 2 == 0 && W % 2 == 0, "haar_forward: spatial dims must be even, got ", H, "x",
              W);
  auto out = haar_fwd_kernel(x.data().data(), N, C, H, W);
  return make_op<T>({N, 4 * C, H / 2, W / 2}, std::move(out), {x},
                    [N, C, H, W](Node<T>& nd) {
                      if (!nd.parent_rg[0]) return;
                      auto pg = nd.parents[0]->ensure_grad();
                      // orthonormal: the adjoint is the inverse map
                      auto g = haar_inv_kernel(nd.grad.data(), N, 4 * C, H / 2, W / 2);
                      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                    });
}

template <class T>
TensorT<T> haar_inverse(const TensorT<T>& x) {
  IRN_REQUIRE(x.ndim() == 4, "haar_inverse: input must be NCHW, got ", shape_str(x.shape()));
  const int64_t N = x.dim(0), C4 = x.dim(1), Hh = x.dim(2), Wh = x.dim(3);
  IRN_REQUIRE(C4 % 4 == 0, "haar_inverse: channel count must be divisible by 4, got ", C4);
  auto out = haar_inv_kernel(x.data().data(), N, C4, Hh, Wh);
  return make_op<T>({N, C4 / 4, Hh * 2, Wh * 2}, std::move(out), {x},
                    [N, C4, Hh, Wh](Node<T>& nd) {
                      if (!nd.parent_rg[0]) return;
                      auto pg = nd.parents[0]->ensure_grad();
                      auto g = haar_fwd_kernel(nd.grad.data(), N, C4 / 4, Hh * 2, Wh * 2);
                      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                    });
}

template <class T>
TensorT<T> quantize_ste(const TensorT<T>& y) {
  const auto yv = y.data();
  std::vector<T> out(yv.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double r = std::round(static_cast<double>(yv[i]) * 255.0);
    out[i] = static_cast<T>(std::clamp(r, 0.0, 255.0) / 255.0);
  }
  return make_op<T>(y.shape(), std::move(out), {y}, [](Node<T>& nd) {
    if (!nd.parent_rg[0]) return;
    auto pg = nd.parents[0]->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) pg[i] += nd.grad[i];  // straight-through
  });
}

template <class T>
TensorT<T> sample_latent(Shape shape, T alpha, Rng& rng) {
  IRN_REQUIRE(alpha >= T(0), "sample_latent: alpha must be >= 0, got ", alpha);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = alpha * static_cast<T>(rng.normal());
  return TensorT<T>::from_vector(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// DenseBlock
// ---------------------------------------------------------------------------

namespace {

template <class T>
TensorT<T> he_init(Shape shape, int64_t fan_in, T scale, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  const double std = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = static_cast<T>(std * rng.normal());
  return TensorT<T>::from_vector(std::move(shape), std::move(v), true);
}

}  // namespace

template <class T>
DenseBlockT<T>::DenseBlockT(int in_ch, int out_ch, int growth_, Rng& rng)
    : in_channels(in_ch), out_channels(out_ch), growth(growth_) {
  for (int i = 0; i < 4; ++i) {
    const int cin = in_ch + i * growth_;
    weights.push_back(he_init<T>({growth_, cin, 3, 3}, int64_t(cin) * 9, T(0.1), rng));
    biases.push_back(TensorT<T>::zeros({growth_}, true));
  }
  // final projection starts at zero: a fresh block computes the zero map
  weights.push_back(TensorT<T>::zeros({out_ch, in_ch + 4 * growth_, 3, 3}, true));
  biases.push_back(TensorT<T>::zeros({out_ch}, true));
}

template <class T>
TensorT<T> DenseBlockT<T>::forward(const TensorT<T>& x) const {
  TensorT<T> feats = x;
  for (int i = 0; i < 4; ++i) {
    auto c = leaky_relu(conv2d(feats, weights[i], biases[i], 1, 1));
    feats = channel_concat(feats, c);
  }
  return conv2d(feats, weights[4], biases[4], 1, 1);
}

template <class T>
void DenseBlockT<T>::collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  for (int i = 0; i < 5; ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i + 1) + ".weight", &weights[i]});
    out.push_back({prefix + ".conv" + std::to_string(i + 1) + ".bias", &biases[i]});
  }
}

template <class T>
void DenseBlockT<T>::randomize_all(Rng& rng, T scale) {
  for (int i = 0; i < 5; ++i) {
    const int64_t fan_in = weights[i].dim(1) * 9;
    const double std = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : weights[i].mut_data()) v = static_cast<T>(std * rng.normal());
    for (auto& v : biases[i].mut_data()) v = static_cast<T>(0.01 * std * rng.normal());
  }
}

// ---------------------------------------------------------------------------
// InvBlock
// ---------------------------------------------------------------------------

template <class T>
InvBlockT<T>::InvBlockT(int c_low_, int c_high_, int growth, Rng& rng, T clamp_scale_)
    : c_low(c_low_),
      c_high(c_high_),
      clamp_scale(clamp_scale_),
      phi(c_high_, c_low_, growth, rng),
      eta(c_low_, c_high_, growth, rng),
      rho(c_low_, c_high_, growth, rng) {}

template <class T>
TensorT<T> InvBlockT<T>::bounded_log_scale(const TensorT<T>& rho_logits, T s) {
  // s * (2*sigmoid(x) - 1) in (-s, s)
  return mul(sub(mul(sigmoid(rho_logits), T(2)), T(1)), s);
}

template <class T>
std::pair<TensorT<T>, TensorT<T>> InvBlockT<T>::forward(const TensorT<T>& h1,
                                                        const TensorT<T>& h2) const {
  IRN_REQUIRE(h1.dim(1) == c_low && h2.dim(1) == c_high, "invblock: channel widths ", h1.dim(1),
              "/", h2.dim(1), " do not match split ", c_low, "/", c_high);
  auto h1p = add(h1, phi.forward(h2));
  auto r = bounded_log_scale(rho.forward(h1p), clamp_scale);
  auto h2p = add(mul(h2, exp(r)), eta.forward(h1p));
  return {h1p, h2p};
}

template <class T>
std::pair<TensorT<T>, TensorT<T>> InvBlockT<T>::inverse(const TensorT<T>& h1p,
                                                        const TensorT<T>& h2p) const {
  IRN_REQUIRE(h1p.dim(1) == c_low && h2p.dim(1) == c_high, "invblock: channel widths ",
              h1p.dim(1), "/", h2p.dim(1), " do not match split ", c_low, "/", c_high);
  auto r = bounded_log_scale(rho.forward(h1p), clamp_scale);
  auto h2 = mul(sub(h2p, eta.forward(h1p)), exp(neg(r)));
  auto h1 = sub(h1p, phi.forward(h2));
  return {h1, h2};
}

template <class T>
void InvBlockT<T>::collect_params(const std::string& prefix, std::vector<NamedParam<T>>& out) {
  phi.collect_params(prefix + ".phi", out);
  eta.collect_params(prefix + ".eta", out);
  rho.collect_params(prefix + ".rho", out);
}

template <class T>
void InvBlockT<T>::randomize_all(Rng& rng, T scale) {
  phi.randomize_all(rng, scale);
  eta.randomize_all(rng, scale);
  rho.randomize_all(rng, scale);
}

// ---------------------------------------------------------------------------
// IrnModel
// ---------------------------------------------------------------------------

template <class T>
IrnModelT<T>::IrnModelT(int scale, int blocks_per_module, int growth, Rng& rng, T clamp_scale)
    : scale_(scale), blocks_(blocks_per_module), growth_(growth), clamp_(clamp_scale) {
  IRN_REQUIRE(scale >= 2 && (scale & (scale - 1)) == 0, "model scale must be a power of 2, got ",
              scale);
  IRN_REQUIRE(blocks_per_module >= 1 && growth >= 1, "model needs >= 1 block and growth, got ",
              blocks_per_module, "/", growth);
  levels_ = 0;
  for (int s = scale; s > 1; s /= 2) ++levels_;
  int ch = 3;
  for (int m = 0; m < levels_; ++m) {
    ch *= 4;  // after this module's Haar layer
    std::vector<InvBlockT<T>> blocks;
    blocks.reserve(blocks_);
    for (int b = 0; b < blocks_; ++b) blocks.emplace_back(3, ch - 3, growth_, rng, clamp_);
    modules_.push_back(std::move(blocks));
  }
}

template <class T>
int64_t IrnModelT<T>::z_channels() const {
  int64_t c = 3;
  for (int m = 0; m < levels_; ++m) c *= 4;
  return c - 3;
}

template <class T>
Shape IrnModelT<T>::z_shape(int64_t batch, int64_t hr_h, int64_t hr_w) const {
  return {batch, z_channels(), hr_h / scale_, hr_w / scale_};
}

template <class T>
std::pair<TensorT<T>, TensorT<T>> IrnModelT<T>::forward(const TensorT<T>& x) const {
  IRN_REQUIRE(x.ndim() == 4 && x.dim(1) == 3, "model forward: input must be Nx3xHxW, got ",
              shape_str(x.shape()));
  IRN_REQUIRE(x.dim(2) % scale_ == 0 && x.dim(3) % scale_ == 0,
              "model forward: spatial dims ", x.dim(2), "x", x.dim(3),
              " must be divisible by scale ", scale_);
  TensorT<T> t = x;
  for (const auto& module : modules_) {
    t = haar_forward(t);
    auto [h1, h2] = channel_split(t, 3);
    for (const auto& block : module) std::tie(h1, h2) = block.forward(h1, h2);
    t = channel_concat(h1, h2);
  }
  auto [y, z] = channel_split(t, 3);
  return {y, z};
}

template <class T>
TensorT<T> IrnModelT<T>::inverse(const TensorT<T>& y, const TensorT<T>& z) const {
  IRN_REQUIRE(y.ndim() == 4 && y.dim(1) == 3, "model inverse: y must be Nx3xhxw, got ",
              shape_str(y.shape()));
  IRN_REQUIRE(z.ndim() == 4 && z.dim(1) == z_channels(), "model inverse: z must have ",
              z_channels(), " channels, got ", shape_str(z.shape()));
  IRN_REQUIRE(y.dim(0) == z.dim(0) && y.dim(2) == z.dim(2) && y.dim(3) == z.dim(3),
              "model inverse: y ", shape_str(y.shape()), " and z ", shape_str(z.shape()),
              " disagree");
  TensorT<T> t = channel_concat(y, z);
  for (auto mit = modules_.rbegin(); mit != modules_.rend(); ++mit) {
    auto [h1, h2] = channel_split(t, 3);
    for (auto bit = mit->rbegin(); bit != mit->rend(); ++bit)
      std::tie(h1, h2) = bit->inverse(h1, h2);
    t = haar_inverse(channel_concat(h1, h2));
  }
  return t;
}

template <class T>
std::vector<NamedParam<T>> IrnModelT<T>::params() {
  std::vector<NamedParam<T>> out;
  for (size_t m = 0; m < modules_.size(); ++m)
    for (size_t b = 0; b < modules_[m].size(); ++b)
      modules_[m][b].collect_params(
          "mod" + std::to_string(m) + ".block" + std::to_string(b), out);
  return out;
}

template <class T>
void IrnModelT<T>::set_requires_grad(bool b) {
  for (auto& p : params()) p.tensor->set_requires_grad(b);
}

template <class T>
void IrnModelT<T>::zero_grad() {
  for (auto& p : params()) p.tensor->zero_grad();
}

template <class T>
void IrnModelT<T>::randomize_all(Rng& rng, T scale) {
  for (auto& module : modules_)
    for (auto& block : module) block.randomize_all(rng, scale);
}

// ---------------------------------------------------------------------------
// image <-> tensor
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> images_to_tensor(std::span<const ImageF> images) {
  IRN_REQUIRE(!images.empty(), "images_to_tensor: empty batch");
  const int64_t H = images[0].height, W = images[0].width;
  std::vector<T> v(images.size() * 3 * H * W);
  for (size_t n = 0; n < images.size(); ++n) {
    const ImageF& img = images[n];
    IRN_REQUIRE(img.height == H && img.width == W, "images_to_tensor: image ", n, " is ",
                img.width, "x", img.height, ", expected ", W, "x", H);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          v[((n * 3 + c) * H + y) * W + x] = static_cast<T>(img.data[(y * W + x) * 3 + c]);
  }
  return TensorT<T>::from_vector({static_cast<int64_t>(images.size()), 3, H, W}, std::move(v));
}

template <class T>
TensorT<T> image_to_tensor(const ImageF& img) {
  return images_to_tensor<T>(std::span<const ImageF>(&img, 1));
}

template <class T>
ImageF tensor_to_image(const TensorT<T>& t, int64_t batch_index) {
  IRN_REQUIRE(t.ndim() == 4 && t.dim(1) == 3, "tensor_to_image: need Nx3xHxW, got ",
              shape_str(t.shape()));
  IRN_REQUIRE(batch_index >= 0 && batch_index < t.dim(0), "tensor_to_image: batch index ",
              batch_index, " out of range");
  const int64_t H = t.dim(2), W = t.dim(3);
  ImageF img;
  img.height = static_cast<int>(H);
  img.width = static_cast<int>(W);
  img.data.resize(3 * H * W);
  const T* v = t.data().data() + batch_index * 3 * H * W;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        double u = static_cast<double>(v[(c * H + y) * W + x]);
        img.data[(y * W + x) * 3 + c] = static_cast<float>(std::clamp(u, 0.0, 1.0));
      }
  return img;
}

#define IRN_INSTANTIATE_MODEL(T)                                            \
  template TensorT<T> haar_forward<T>(const TensorT<T>&);                   \
  template TensorT<T> haar_inverse<T>(const TensorT<T>&);                   \
  template TensorT<T> quantize_ste<T>(const TensorT<T>&);                   \
  template TensorT<T> sample_latent<T>(Shape, T, Rng&);                     \
  template struct DenseBlockT<T>;                                           \
  template struct InvBlockT<T>;                                             \
  template class IrnModelT<T>;                                              \
  template TensorT<T> images_to_tensor<T>(std::span<const ImageF>);         \
  template TensorT<T> image_to_tensor<T>(const ImageF&);                    \
  template ImageF tensor_to_image<T>(const TensorT<T>&, int64_t);

IRN_INSTANTIATE_MODEL(float)
IRN_INSTANTIATE_MODEL(double)

#undef IRN_INSTANTIATE_MODEL

}  // namespace irn
