#ifndef IRN_LOSSES_HPP
#define IRN_LOSSES_HPP

#include <string>
#include <vector>

#include "irn/model.hpp"
#include "irn/tensor.hpp"

namespace irn {

enum class Metric { L1, L2 };

// Loss coefficients and metric choices for the two training stages. The
// perceptual weight exists for config compatibility but must stay zero.
template <class T>
struct LossWeightsT {
  T recon = T(1);   // lambda1
  T guide = T(16);  // lambda2
  T distr = T(1);   // lambda3
  T percp = T(0);   // lambda4 (unsupported if nonzero)
  Metric recon_metric = Metric::L1;
  Metric guide_metric = Metric::L2;
};

using LossWeights = LossWeightsT<float>;

// SRGAN-style conv discriminator: eight 3x3 convolutions with widths
// (64,64,128,128,256,256,512,512) * width_mult, stride 2 on every second
// layer, leaky-relu(0.2) activations, then two fully connected layers with
// 100 hidden units and a single unbounded logit output. The final layer is
// zero-initialized, so a fresh discriminator outputs exactly 0.
template <class T>
struct DiscriminatorT {
  int input_size = 0;
  std::vector<int> widths;
  std::vector<TensorT<T>> conv_w, conv_b;
  TensorT<T> fc1_w, fc1_b, fc2_w, fc2_b;

  DiscriminatorT(int input_size_, double width_mult, Rng& rng);
  // x: [N,3,input_size,input_size] -> [N,1] logits
  TensorT<T> forward(const TensorT<T>& x) const;
  std::vector<NamedParam<T>> params();
  void set_requires_grad(bool b);
  void zero_grad();
};

using Discriminator = DiscriminatorT<float>;

// Mean per-element difference between the model LR output and the bicubic
// guidance (default L2).
template <class T>
TensorT<T> lr_guide_loss(const TensorT<T>& y, const TensorT<T>& y_guide, Metric m = Metric::L2);

// Mean per-element difference between the original batch and its
// reconstruction through a fresh latent draw (default L1).
template <class T>
TensorT<T> hr_recon_loss(const TensorT<T>& x, const TensorT<T>& x_hat, Metric m = Metric::L1);

// Per-element negative standard-normal log-density of z, averaged:
// mean(z^2)/2 + log(2*pi)/2. Minimized at z = 0 with value log(2*pi)/2.
template <class T>
TensorT<T> latent_ce_loss(const TensorT<T>& z);

// Adversarial losses at the logit level, in numerically stable log-sigmoid
// form. d = -mean[log s(t_real)] - mean[log s(-t_fake)]; the generator loss
// is the non-saturating -mean[log s(t_fake)].
template <class T>
TensorT<T> adversarial_d_loss(const TensorT<T>& t_real, const TensorT<T>& t_fake);
template <class T>
TensorT<T> adversarial_g_loss(const TensorT<T>& t_fake);

// Net-level wrappers. discriminator_loss detaches the fake batch, so model
// parameter grads stay exactly zero; generator_js_loss records the graph with
// the discriminator's parameters frozen, so its grads stay exactly zero.
template <class T>
TensorT<T> discriminator_loss(const DiscriminatorT<T>& disc, const TensorT<T>& real,
                              const TensorT<T>& fake);
template <class T>
TensorT<T> generator_js_loss(DiscriminatorT<T>& disc, const TensorT<T>& fake);

// One training-direction pass: forward, (optional) quantization of y, inverse
// through the supplied latent draw. Quantization is applied to y exactly once,
// here, matching what deployment does to the stored LR image.
template <class T>
struct GenPassT {
  TensorT<T> y, y_q, z, xhat;
};
template <class T>
GenPassT<T> generate_pass(const IrnModelT<T>& model, const TensorT<T>& x,
                          const TensorT<T>& z_draw, bool quantize = true);

template <class T>
struct LossBreakdownT {
  TensorT<T> total, recon, guide, distr;
  GenPassT<T> pass;
};

// Pretrain objective: l1*recon + l2*guide + l3*ce(z).
template <class T>
LossBreakdownT<T> total_loss_pretrain(const TensorT<T>& x, const TensorT<T>& y_guide,
                                      const IrnModelT<T>& model, const TensorT<T>& z_draw,
                                      const LossWeightsT<T>& w, bool quantize = true);

// Finetune objective: l1*recon + l2*guide + l3*(-mean log s(T(xhat))).
// The perceptual term is not supported and its weight must be zero.
template <class T>
LossBreakdownT<T> total_loss_finetune(const TensorT<T>& x, const TensorT<T>& y_guide,
                                      const IrnModelT<T>& model, DiscriminatorT<T>& disc,
                                      const TensorT<T>& z_draw, const LossWeightsT<T>& w,
                                      bool quantize = true);

}  // namespace irn

#endif
