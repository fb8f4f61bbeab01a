#include "irn/losses.hpp"

#include <cmath>

namespace irn {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

template <class T>
DiscriminatorT<T>::DiscriminatorT(int input_size_, double width_mult, Rng& rng)
    : input_size(input_size_) {
  IRN_REQUIRE(input_size_ >= 16 && input_size_ % 16 == 0,
              "discriminator input size must be a multiple of 16, got ", input_size_);
  const int base[8] = {64, 64, 128, 128, 256, 256, 512, 512};
  int in_ch = 3;
  for (int i = 0; i < 8; ++i) {
    int w = std::max(4, static_cast<int>(std::lround(base[i] * width_mult)));
    widths.push_back(w);
    const int64_t fan_in = int64_t(in_ch) * 9;
    std::vector<T> wv(int64_t(w) * in_ch * 9);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : wv) v = static_cast<T>(std * rng.normal());
    conv_w.push_back(TensorT<T>::from_vector({w, in_ch, 3, 3}, std::move(wv), true));
    conv_b.push_back(TensorT<T>::zeros({w}, true));
    in_ch = w;
  }
  const int spatial = input_size_ / 16;  // four stride-2 layers
  const int64_t flat = int64_t(in_ch) * spatial * spatial;
  std::vector<T> f1(100 * flat);
  const double std1 = std::sqrt(2.0 / static_cast<double>(flat));
  for (auto& v : f1) v = static_cast<T>(std1 * rng.normal());
  fc1_w = TensorT<T>::from_vector({100, flat}, std::move(f1), true);
  fc1_b = TensorT<T>::zeros({100}, true);
  fc2_w = TensorT<T>::zeros({1, 100}, true);  // fresh discriminator: logit is exactly 0
  fc2_b = TensorT<T>::zeros({1}, true);
}

template <class T>
TensorT<T> DiscriminatorT<T>::forward(const TensorT<T>& x) const {
  IRN_REQUIRE(x.ndim() == 4 && x.dim(1) == 3 && x.dim(0) >= 1,
              "discriminator: input must be a nonempty Nx3xHxW batch, got ",
              shape_str(x.shape()));
  IRN_REQUIRE(x.dim(2) == input_size && x.dim(3) == input_size,
              "discriminator: built for ", input_size, "x", input_size, " inputs, got ",
              x.dim(3), "x", x.dim(2));
  TensorT<T> h = x;
  for (int i = 0; i < 8; ++i) {
    const int stride = (i % 2 == 1) ? 2 : 1;
    h = leaky_relu(conv2d(h, conv_w[i], conv_b[i], stride, 1));
  }
  h = reshape(h, {x.dim(0), h.numel() / x.dim(0)});
  h = leaky_relu(linear(h, fc1_w, fc1_b));
  return linear(h, fc2_w, fc2_b);
}

template <class T>
std::vector<NamedParam<T>> DiscriminatorT<T>::params() {
  std::vector<NamedParam<T>> out;
  for (int i = 0; i < 8; ++i) {
    out.push_back({"conv" + std::to_string(i + 1) + ".weight", &conv_w[i]});
    out.push_back({"conv" + std::to_string(i + 1) + ".bias", &conv_b[i]});
  }
  out.push_back({"fc1.weight", &fc1_w});
  out.push_back({"fc1.bias", &fc1_b});
  out.push_back({"fc2.weight", &fc2_w});
  out.push_back({"fc2.bias", &fc2_b});
  return out;
}

template <class T>
void DiscriminatorT<T>::set_requires_grad(bool b) {
  for (auto& p : params()) p.tensor->set_requires_grad(b);
}

template <class T>
void DiscriminatorT<T>::zero_grad() {
  for (auto& p : params()) p.tensor->zero_grad();
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {

template <class T>
TensorT<T> mean_diff(const TensorT<T>& a, const TensorT<T>& b, Metric m, const char* what) {
  IRN_REQUIRE(a.shape() == b.shape(), what, ": shape mismatch ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  auto d = sub(a, b);
  return m == Metric::L1 ? reduce_mean_abs(d) : reduce_mean_square(d);
}

}  // namespace

template <class T>
TensorT<T> lr_guide_loss(const TensorT<T>& y, const TensorT<T>& y_guide, Metric m) {
  return mean_diff(y, y_guide, m, "lr_guide_loss");
}

template <class T>
TensorT<T> hr_recon_loss(const TensorT<T>& x, const TensorT<T>& x_hat, Metric m) {
  return mean_diff(x, x_hat, m, "hr_recon_loss");
}

template <class T>
TensorT<T> latent_ce_loss(const TensorT<T>& z) {
  return add(mul(reduce_mean_square(z), T(0.5)), static_cast<T>(kHalfLog2Pi));
}

template <class T>
TensorT<T> adversarial_d_loss(const TensorT<T>& t_real, const TensorT<T>& t_fake) {
  IRN_REQUIRE(t_real.numel() > 0 && t_fake.numel() > 0, "adversarial_d_loss: empty batch");
  // -mean log s(t_real) - mean log(1 - s(t_fake)), with log(1-s(x)) = log s(-x)
  return add(neg(reduce_mean(log_sigmoid(t_real))), neg(reduce_mean(log_sigmoid(neg(t_fake)))));
}

template <class T>
TensorT<T> adversarial_g_loss(const TensorT<T>& t_fake) {
  IRN_REQUIRE(t_fake.numel() > 0, "adversarial_g_loss: empty batch");
  return neg(reduce_mean(log_sigmoid(t_fake)));
}

template <class T>
TensorT<T> discriminator_loss(const DiscriminatorT<T>& disc, const TensorT<T>& real,
                              const TensorT<T>& fake) {
  return adversarial_d_loss(disc.forward(real), disc.forward(fake.detach()));
}

template <class T>
TensorT<T> generator_js_loss(DiscriminatorT<T>& disc, const TensorT<T>& fake) {
  // record the discriminator pass with its parameters frozen; gradients flow
  // through it to the fake batch only
  auto ps = disc.params();
  std::vector<bool> saved(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    saved[i] = ps[i].tensor->requires_grad();
    ps[i].tensor->set_requires_grad(false);
  }
  auto loss = adversarial_g_loss(disc.forward(fake));
  for (size_t i = 0; i < ps.size(); ++i) ps[i].tensor->set_requires_grad(saved[i]);
  return loss;
}

// ---------------------------------------------------------------------------
// staged objectives
// ---------------------------------------------------------------------------

template <class T>
GenPassT<T> generate_pass(const IrnModelT<T>& model, const TensorT<T>& x,
                          const TensorT<T>& z_draw, bool quantize) {
  GenPassT<T> pass;
  std::tie(pass.y, pass.z) = model.forward(x);
  pass.y_q = quantize ? quantize_ste(pass.y) : pass.y;
  pass.xhat = model.inverse(pass.y_q, z_draw);
  return pass;
}

template <class T>
LossBreakdownT<T> total_loss_pretrain(const TensorT<T>& x, const TensorT<T>& y_guide,
                                      const IrnModelT<T>& model, const TensorT<T>& z_draw,
                                      const LossWeightsT<T>& w, bool quantize) {
  LossBreakdownT<T> b;
  b.pass = generate_pass(model, x, z_draw, quantize);
  b.recon = hr_recon_loss(x, b.pass.xhat, w.recon_metric);
  b.guide = lr_guide_loss(b.pass.y, y_guide, w.guide_metric);
  b.distr = latent_ce_loss(b.pass.z);
  b.total = add(add(mul(b.recon, w.recon), mul(b.guide, w.guide)), mul(b.distr, w.distr));
  return b;
}

template <class T>
LossBreakdownT<T> total_loss_finetune(const TensorT<T>& x, const TensorT<T>& y_guide,
                                      const IrnModelT<T>& model, DiscriminatorT<T>& disc,
                                      const TensorT<T>& z_draw, const LossWeightsT<T>& w,
                                      bool quantize) {
  IRN_REQUIRE(w.percp == T(0), "perceptual loss is not supported; lambda4 must be 0, got ",
              w.percp);
  LossBreakdownT<T> b;
  b.pass = generate_pass(model, x, z_draw, quantize);
  b.recon = hr_recon_loss(x, b.pass.xhat, w.recon_metric);
  b.guide = lr_guide_loss(b.pass.y, y_guide, w.guide_metric);
  b.distr = generator_js_loss(disc, b.pass.xhat);
  b.total = add(add(mul(b.recon, w.recon), mul(b.guide, w.guide)), mul(b.distr, w.distr));
  return b;
}

#define IRN_INSTANTIATE_LOSSES(T)                                                              \
  template struct DiscriminatorT<T>;                                                           \
  template TensorT<T> lr_guide_loss<T>(const TensorT<T>&, const TensorT<T>&, Metric);          \
  template TensorT<T> hr_recon_loss<T>(const TensorT<T>&, const TensorT<T>&, Metric);          \
  template TensorT<T> latent_ce_loss<T>(const TensorT<T>&);                                    \
  template TensorT<T> adversarial_d_loss<T>(const TensorT<T>&, const TensorT<T>&);             \
  template TensorT<T> adversarial_g_loss<T>(const TensorT<T>&);                                \
  template TensorT<T> discriminator_loss<T>(const DiscriminatorT<T>&, const TensorT<T>&,      \
                                            const TensorT<T>&);                                \
  template TensorT<T> generator_js_loss<T>(DiscriminatorT<T>&, const TensorT<T>&);            \
  template GenPassT<T> generate_pass<T>(const IrnModelT<T>&, const TensorT<T>&,                \
                                        const TensorT<T>&, bool);                              \
  template LossBreakdownT<T> total_loss_pretrain<T>(const TensorT<T>&, const TensorT<T>&,      \
                                                    const IrnModelT<T>&, const TensorT<T>&,    \
                                                    const LossWeightsT<T>&, bool);             \
  template LossBreakdownT<T> total_loss_finetune<T>(const TensorT<T>&, const TensorT<T>&,      \
                                                    const IrnModelT<T>&, DiscriminatorT<T>&,   \
                                                    const TensorT<T>&, const LossWeightsT<T>&, \
                                                    bool);

IRN_INSTANTIATE_LOSSES(float)
IRN_INSTANTIATE_LOSSES(double)

#undef IRN_INSTANTIATE_LOSSES

}  // namespace irn
