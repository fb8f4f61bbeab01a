#include "irn/tensor.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <mutex>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace irn {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

// BLAS kernels are pinned to one thread; parallelism lives in the callers
// (over batch items / disjoint output blocks) so results do not depend on the
// thread count.
void pin_blas_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

template <class T>
void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  pin_blas_once();
  if constexpr (sizeof(T) == 4)
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  else
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

#ifndef NDEBUG
template <class T>
void debug_check_finite(const std::vector<T>& v, const char* what) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x)))
      throw std::logic_error(std::string("non-finite value produced by ") + what);
}
#else
template <class T>
void debug_check_finite(const std::vector<T>&, const char*) {}
#endif

template <class T>
int64_t check_same_or_scalar(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() == b.shape()) return 0;
  if (a.numel() == 1) return 1;
  if (b.numel() == 1) return 2;
  IRN_REQUIRE(false, "elementwise op: incompatible shapes ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  return -1;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <class T>
TensorT<T> TensorT<T>::zeros(Shape s, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(s);
  n->value.assign(shape_numel(n->shape), T(0));
  n->requires_grad = requires_grad;
  return TensorT<T>(std::move(n));
}

template <class T>
TensorT<T> TensorT<T>::full(Shape s, T v, bool requires_grad) {
  auto t = zeros(std::move(s), requires_grad);
  std::fill(t.mut_data().begin(), t.mut_data().end(), v);
  return t;
}

template <class T>
TensorT<T> TensorT<T>::from_vector(Shape s, std::vector<T> v, bool requires_grad) {
  IRN_REQUIRE(shape_numel(s) == static_cast<int64_t>(v.size()), "from_vector: shape ",
              shape_str(s), " wants ", shape_numel(s), " values, got ", v.size());
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(s);
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return TensorT<T>(std::move(n));
}

template <class T>
TensorT<T> TensorT<T>::scalar(T v) {
  return from_vector({1}, {v});
}

template <class T>
TensorT<T> TensorT<T>::detach() const {
  auto n = std::make_shared<Node<T>>();
  n->shape = n_->shape;
  n->value = n_->value;
  n->requires_grad = false;
  return TensorT<T>(std::move(n));
}

template <class T>
TensorT<T> make_op(Shape out_shape, std::vector<T> out_value, std::vector<TensorT<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  debug_check_finite(out_value, "op forward");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(out_shape);
  n->value = std::move(out_value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->leaf = false;
    n->parents.reserve(parents.size());
    n->parent_rg.reserve(parents.size());
    for (auto& p : parents) {
      n->parents.push_back(p.node());
      n->parent_rg.push_back(p.requires_grad() ? 1 : 0);
    }
    n->backward_fn = std::move(backward);
  }
  return TensorT<T>(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> elementwise_unary(const TensorT<T>& x, UnaryOp op, T leaky_slope) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  switch (op) {
    case UnaryOp::exp:
      for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xs[i]);
      break;
    case UnaryOp::sigmoid:
      for (size_t i = 0; i < out.size(); ++i) {
        T v = xs[i];
        out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      }
      break;
    case UnaryOp::log_sigmoid:
      for (size_t i = 0; i < out.size(); ++i) {
        T v = xs[i];
        out[i] = v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
      }
      break;
    case UnaryOp::leaky_relu:
      for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] > 0 ? xs[i] : leaky_slope * xs[i];
      break;
    case UnaryOp::neg:
      for (size_t i = 0; i < out.size(); ++i) out[i] = -xs[i];
      break;
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [op, leaky_slope](Node<T>& n) {
    if (!n.parent_rg[0]) return;
    auto& p = *n.parents[0];
    auto pg = p.ensure_grad();
    const auto& g = n.grad;
    const auto& y = n.value;
    const auto& xv = p.value;
    switch (op) {
      case UnaryOp::exp:
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * y[i];
        break;
      case UnaryOp::sigmoid:
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case UnaryOp::log_sigmoid:
        // d/dx log sigmoid(x) = sigmoid(-x)
        for (size_t i = 0; i < g.size(); ++i) {
          T v = -xv[i];
          T s = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
          pg[i] += g[i] * s;
        }
        break;
      case UnaryOp::leaky_relu:
        for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * (xv[i] > 0 ? T(1) : leaky_slope);
        break;
      case UnaryOp::neg:
        for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
        break;
    }
  });
}

template <class T>
TensorT<T> elementwise_binary(const TensorT<T>& a, const TensorT<T>& b, BinaryOp op) {
  int64_t bc = check_same_or_scalar(a, b);  // 0: same, 1: a scalar, 2: b scalar
  const auto av = a.data();
  const auto bv = b.data();
  size_t n = std::max(av.size(), bv.size());
  std::vector<T> out(n);
  auto ai = [&](size_t i) { return av[bc == 1 ? 0 : i]; };
  auto bi = [&](size_t i) { return bv[bc == 2 ? 0 : i]; };
  switch (op) {
    case BinaryOp::add:
      for (size_t i = 0; i < n; ++i) out[i] = ai(i) + bi(i);
      break;
    case BinaryOp::sub:
      for (size_t i = 0; i < n; ++i) out[i] = ai(i) - bi(i);
      break;
    case BinaryOp::mul:
      for (size_t i = 0; i < n; ++i) out[i] = ai(i) * bi(i);
      break;
  }
  Shape out_shape = bc == 1 ? b.shape() : a.shape();
  return make_op<T>(std::move(out_shape), std::move(out), {a, b}, [op, bc](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto& g = n.grad;
    if (n.parent_rg[0]) {
      auto ga = pa.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T v = g[i];
        if (op == BinaryOp::mul) v *= pb.value[bc == 2 ? 0 : i];
        ga[bc == 1 ? 0 : i] += v;
      }
    }
    if (n.parent_rg[1]) {
      auto gb = pb.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T v = g[i];
        if (op == BinaryOp::mul)
          v *= pa.value[bc == 1 ? 0 : i];
        else if (op == BinaryOp::sub)
          v = -v;
        gb[bc == 2 ? 0 : i] += v;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reduce(const TensorT<T>& x, ReduceOp op) {
  IRN_REQUIRE(x.numel() > 0, "reduce: empty tensor");
  const auto xv = x.data();
  double acc = 0;  // fixed serial order, double accumulator for both dtypes
  switch (op) {
    case ReduceOp::mean:
    case ReduceOp::sum:
      for (T v : xv) acc += static_cast<double>(v);
      break;
    case ReduceOp::mean_abs:
      for (T v : xv) acc += std::abs(static_cast<double>(v));
      break;
    case ReduceOp::mean_square:
      for (T v : xv) acc += static_cast<double>(v) * static_cast<double>(v);
      break;
  }
  if (op != ReduceOp::sum) acc /= static_cast<double>(xv.size());
  std::vector<T> out{static_cast<T>(acc)};
  return make_op<T>({1}, std::move(out), {x}, [op](Node<T>& n) {
    if (!n.parent_rg[0]) return;
    auto& p = *n.parents[0];
    auto pg = p.ensure_grad();
    const T g = n.grad[0];
    const T inv_n = T(1) / static_cast<T>(p.value.size());
    switch (op) {
      case ReduceOp::mean:
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += g * inv_n;
        break;
      case ReduceOp::sum:
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += g;
        break;
      case ReduceOp::mean_abs:
        for (size_t i = 0; i < pg.size(); ++i) {
          T s = p.value[i] > 0 ? T(1) : (p.value[i] < 0 ? T(-1) : T(0));
          pg[i] += g * s * inv_n;
        }
        break;
      case ReduceOp::mean_square:
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += g * T(2) * p.value[i] * inv_n;
        break;
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace {

// reusable per-thread buffers; conv workloads churn through identical sizes
// every iteration and allocation cost was measurable
template <class T>
std::vector<T>& scratch(int slot, size_t n) {
  thread_local std::vector<T> bufs[3];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

// im2col into a wide matrix: row r of the [C*k*k, ld] buffer holds this
// item's patch samples at columns [col0, col0+Ho*Wo) (caller pre-offsets the
// pointer); stride-1 rows are contiguous copies.
template <class T>
void im2col_cols(const T* in, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
                 int64_t Ho, int64_t Wo, T* cols, int64_t ld) {
  for (int64_t c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        T* row = cols + ((c * k + kh) * k + kw) * ld;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t hi = ho * stride - pad + kh;
          T* dst = row + ho * Wo;
          if (hi < 0 || hi >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = in + (c * H + hi) * W;
          if (stride == 1) {
            const int64_t wo_lo = std::max<int64_t>(0, pad - kw);
            const int64_t wo_hi = std::min<int64_t>(Wo, W + pad - kw);
            std::fill(dst, dst + wo_lo, T(0));
            if (wo_hi > wo_lo)
              std::copy(src + wo_lo - pad + kw, src + wo_hi - pad + kw, dst + wo_lo);
            std::fill(dst + std::max(wo_lo, wo_hi), dst + Wo, T(0));
          } else {
            for (int64_t wo = 0; wo < Wo; ++wo) {
              int64_t wi = wo * stride - pad + kw;
              dst[wo] = (wi >= 0 && wi < W) ? src[wi] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add_cols(const T* cols, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
                     int64_t Ho, int64_t Wo, int64_t ld, T* in_grad) {
  for (int64_t c = 0; c < C; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const T* row = cols + ((c * k + kh) * k + kw) * ld;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t hi = ho * stride - pad + kh;
          if (hi < 0 || hi >= H) continue;
          T* dst = in_grad + (c * H + hi) * W;
          const T* src = row + ho * Wo;
          if (stride == 1) {
            const int64_t wo_lo = std::max<int64_t>(0, pad - kw);
            const int64_t wo_hi = std::min<int64_t>(Wo, W + pad - kw);
            T* d = dst - pad + kw;
            for (int64_t wo = wo_lo; wo < wo_hi; ++wo) d[wo] += src[wo];
          } else {
            for (int64_t wo = 0; wo < Wo; ++wo) {
              int64_t wi = wo * stride - pad + kw;
              if (wi >= 0 && wi < W) dst[wi] += src[wo];
            }
          }
        }
      }
    }
  }
}


}  // namespace

template <class T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int padding) {
  IRN_REQUIRE(input.ndim() == 4, "conv2d: input must be NCHW, got ", shape_str(input.shape()));
  IRN_REQUIRE(weight.ndim() == 4, "conv2d: weight must be OIkk, got ", shape_str(weight.shape()));
  const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int64_t O = weight.dim(0), I = weight.dim(1), k = weight.dim(2);
  IRN_REQUIRE(weight.dim(3) == k, "conv2d: kernel must be square, got ", k, "x", weight.dim(3));
  IRN_REQUIRE(k >= 1, "conv2d: kernel size must be positive, got ", k);
  IRN_REQUIRE(I == C, "conv2d: weight expects ", I, " input channels, input has ", C);
  IRN_REQUIRE(bias.ndim() == 1 && bias.dim(0) == O, "conv2d: bias shape ",
              shape_str(bias.shape()), " does not match ", O, " output channels");
  IRN_REQUIRE(stride >= 1 && padding >= 0, "conv2d: bad stride/padding ", stride, "/", padding);
  const int64_t Ho = (H + 2 * padding - k) / stride + 1;
  const int64_t Wo = (W + 2 * padding - k) / stride + 1;
  IRN_REQUIRE(H + 2 * padding >= k && W + 2 * padding >= k && Ho >= 1 && Wo >= 1,
              "conv2d: output would be empty for input ", H, "x", W, ", kernel ", k, ", stride ",
              stride, ", padding ", padding);

  const int64_t K = C * k * k, P = Ho * Wo;
  std::vector<T> out(N * O * P);
  const T* in_ptr = input.data().data();
  const T* w_ptr = weight.data().data();
  const T* b_ptr = bias.data().data();

#pragma omp parallel num_threads(std::min<int64_t>(max_threads(), N))
  {
    auto& cols = scratch<T>(0, K * P);
#pragma omp for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
      im2col_cols(in_ptr + n * C * H * W, C, H, W, k, stride, padding, Ho, Wo, cols.data(), P);
      T* on = out.data() + n * O * P;
      for (int64_t o = 0; o < O; ++o) std::fill(on + o * P, on + (o + 1) * P, b_ptr[o]);
      gemm<T>(CblasNoTrans, CblasNoTrans, O, P, K, T(1), w_ptr, K, cols.data(), P, T(1), on, P);
    }
  }

  auto bw = [stride, padding, N, C, H, W, O, k, Ho, Wo, K, P](Node<T>& nd) {
    auto& pin = *nd.parents[0];
    auto& pw = *nd.parents[1];
    auto& pb = *nd.parents[2];
    const T* g = nd.grad.data();
    const T* in = pin.value.data();
    const T* w = pw.value.data();

    if (nd.parent_rg[2]) {
      auto gb = pb.ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
          double s = 0;
          const T* go = g + (n * O + o) * P;
          for (int64_t p = 0; p < P; ++p) s += go[p];
          gb[o] += static_cast<T>(s);
        }
    }
    const bool need_w = nd.parent_rg[1], need_in = nd.parent_rg[0];
    if (!need_w && !need_in) return;

    if (need_w) {
      // per-item partials computed in parallel, reduced in fixed order
      auto& partial = scratch<T>(1, N * O * K);
#pragma omp parallel num_threads(std::min<int64_t>(max_threads(), N))
      {
        auto& cols = scratch<T>(0, K * P);
#pragma omp for schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          im2col_cols(in + n * C * H * W, C, H, W, k, stride, padding, Ho, Wo, cols.data(), P);
          gemm<T>(CblasNoTrans, CblasTrans, O, K, P, T(1), g + n * O * P, P, cols.data(), P,
                  T(0), partial.data() + n * O * K, K);
        }
      }
      auto gw = pw.ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < O * K; ++i) gw[i] += partial[n * O * K + i];
    }
    if (need_in) {
      auto gi = pin.ensure_grad();
#pragma omp parallel num_threads(std::min<int64_t>(max_threads(), N))
      {
        auto& colsg = scratch<T>(2, K * P);
#pragma omp for schedule(static)
        for (int64_t n = 0; n < N; ++n) {
          gemm<T>(CblasTrans, CblasNoTrans, K, P, O, T(1), w, K, g + n * O * P, P, T(0),
                  colsg.data(), P);
          col2im_add_cols(colsg.data(), C, H, W, k, stride, padding, Ho, Wo, P,
                          gi.data() + n * C * H * W);
        }
      }
    }
  };
  return make_op<T>({N, O, Ho, Wo}, std::move(out), {input, weight, bias}, std::move(bw));
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> linear(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias) {
  IRN_REQUIRE(input.ndim() == 2, "linear: input must be [N,I], got ", shape_str(input.shape()));
  const int64_t N = input.dim(0), I = input.dim(1);
  IRN_REQUIRE(weight.ndim() == 2 && weight.dim(1) == I, "linear: weight ",
              shape_str(weight.shape()), " incompatible with input width ", I);
  const int64_t O = weight.dim(0);
  IRN_REQUIRE(bias.ndim() == 1 && bias.dim(0) == O, "linear: bias shape ",
              shape_str(bias.shape()), " does not match ", O, " outputs");
  std::vector<T> out(N * O);
  for (int64_t n = 0; n < N; ++n)
    std::copy(bias.data().begin(), bias.data().end(), out.begin() + n * O);
  gemm<T>(CblasNoTrans, CblasTrans, N, O, I, T(1), input.data().data(), I, weight.data().data(),
          I, T(1), out.data(), O);

  auto bw = [N, I, O](Node<T>& nd) {
    auto& pin = *nd.parents[0];
    auto& pw = *nd.parents[1];
    auto& pb = *nd.parents[2];
    const T* g = nd.grad.data();
    if (nd.parent_rg[2]) {
      auto gb = pb.ensure_grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) gb[o] += g[n * O + o];
    }
    if (nd.parent_rg[1]) {
      auto gw = pw.ensure_grad();
      gemm<T>(CblasTrans, CblasNoTrans, O, I, N, T(1), g, O, pin.value.data(), I, T(1),
              gw.data(), I);
    }
    if (nd.parent_rg[0]) {
      auto gi = pin.ensure_grad();
      gemm<T>(CblasNoTrans, CblasNoTrans, N, I, O, T(1), g, O, pw.value.data(), I, T(1),
              gi.data(), I);
    }
  };
  return make_op<T>({N, O}, std::move(out), {input, weight, bias}, std::move(bw));
}

// ---------------------------------------------------------------------------
// channel split / concat, reshape
// ---------------------------------------------------------------------------

namespace {

// Slice channels [from, from+count) of an NCHW tensor.
template <class T>
TensorT<T> narrow_channels(const TensorT<T>& x, int64_t from, int64_t count) {
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(N * count * HW);
  const T* src = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    std::copy(src + (n * C + from) * HW, src + (n * C + from + count) * HW,
              out.begin() + n * count * HW);
  return make_op<T>({N, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                    [from, count, N, C, HW](Node<T>& nd) {
                      if (!nd.parent_rg[0]) return;
                      auto& p = *nd.parents[0];
                      auto pg = p.ensure_grad();
                      const T* g = nd.grad.data();
                      for (int64_t n = 0; n < N; ++n) {
                        T* dst = pg.data() + (n * C + from) * HW;
                        const T* s = g + n * count * HW;
                        for (int64_t i = 0; i < count * HW; ++i) dst[i] += s[i];
                      }
                    });
}

}  // namespace

template <class T>
std::pair<TensorT<T>, TensorT<T>> channel_split(const TensorT<T>& x, int64_t at) {
  IRN_REQUIRE(x.ndim() == 4, "channel_split: input must be NCHW, got ", shape_str(x.shape()));
  const int64_t C = x.dim(1);
  IRN_REQUIRE(at > 0 && at < C, "channel_split: split index ", at, " out of range (0,", C, ")");
  return {narrow_channels(x, 0, at), narrow_channels(x, at, C - at)};
}

template <class T>
TensorT<T> channel_concat(const TensorT<T>& a, const TensorT<T>& b) {
  IRN_REQUIRE(a.ndim() == 4 && b.ndim() == 4, "channel_concat: inputs must be NCHW");
  IRN_REQUIRE(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
              "channel_concat: mismatched shapes ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  const int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  std::vector<T> out(N * (Ca + Cb) * HW);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (int64_t n = 0; n < N; ++n) {
    std::copy(pa + n * Ca * HW, pa + (n + 1) * Ca * HW, out.begin() + n * (Ca + Cb) * HW);
    std::copy(pb + n * Cb * HW, pb + (n + 1) * Cb * HW,
              out.begin() + (n * (Ca + Cb) + Ca) * HW);
  }
  return make_op<T>({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                    [N, Ca, Cb, HW](Node<T>& nd) {
                      const T* g = nd.grad.data();
                      auto& pa = *nd.parents[0];
                      auto& pb = *nd.parents[1];
                      if (nd.parent_rg[0]) {
                        auto ga = pa.ensure_grad();
                        for (int64_t n = 0; n < N; ++n) {
                          const T* s = g + n * (Ca + Cb) * HW;
                          for (int64_t i = 0; i < Ca * HW; ++i) ga[n * Ca * HW + i] += s[i];
                        }
                      }
                      if (nd.parent_rg[1]) {
                        auto gb = pb.ensure_grad();
                        for (int64_t n = 0; n < N; ++n) {
                          const T* s = g + (n * (Ca + Cb) + Ca) * HW;
                          for (int64_t i = 0; i < Cb * HW; ++i) gb[n * Cb * HW + i] += s[i];
                        }
                      }
                    });
}

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape s) {
  IRN_REQUIRE(shape_numel(s) == x.numel(), "reshape: ", shape_str(x.shape()), " has ", x.numel(),
              " elements, target ", shape_str(s), " wants ", shape_numel(s));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_op<T>(std::move(s), std::move(out), {x}, [](Node<T>& nd) {
    if (!nd.parent_rg[0]) return;
    auto& p = *nd.parents[0];
    auto pg = p.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) pg[i] += nd.grad[i];
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class T>
void backward(const TensorT<T>& loss) {
  IRN_REQUIRE(loss.defined() && loss.numel() == 1, "backward: loss must be a defined scalar",
              loss.defined() ? detail::concat(", got shape ", shape_str(loss.shape())) : "");
  auto root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable requires grad

  // Iterative post-order DFS over parent links: parents precede consumers in
  // `order`, so the reverse walk processes each record exactly once with all
  // of its consumers already handled.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      size_t i = idx++;
      Node<T>* p = node->parents[i].get();
      if (node->parent_rg[i] && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
    if (!n->leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

template <class T>
double grad_check(const std::function<TensorT<T>()>& loss_fn,
                  const std::vector<TensorT<T>*>& params, const GradCheckOptions& opts) {
  for (auto* p : params) p->zero_grad();
  {
    auto loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) {
    auto g = p->grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p->numel(), T(0));
  }

  Rng rng(opts.seed, 0xbeef);
  double max_rel = 0;
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    const int64_t n = p->numel();
    const int64_t count = std::min<int64_t>(n, opts.max_coords_per_param);
    for (int64_t c = 0; c < count; ++c) {
      int64_t idx = count == n ? c : rng.uniform_int(n);
      auto data = p->mut_data();
      const T orig = data[idx];
      data[idx] = orig + static_cast<T>(opts.epsilon);
      double lp = static_cast<double>(loss_fn().item());
      data[idx] = orig - static_cast<T>(opts.epsilon);
      double lm = static_cast<double>(loss_fn().item());
      data[idx] = orig;
      double numeric = (lp - lm) / (2 * opts.epsilon);
      double a = static_cast<double>(analytic[pi][idx]);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define IRN_INSTANTIATE(T)                                                                       \
  template class TensorT<T>;                                                                     \
  template TensorT<T> make_op<T>(Shape, std::vector<T>, std::vector<TensorT<T>>,                 \
                                 std::function<void(Node<T>&)>);                                 \
  template TensorT<T> elementwise_unary<T>(const TensorT<T>&, UnaryOp, T);                       \
  template TensorT<T> elementwise_binary<T>(const TensorT<T>&, const TensorT<T>&, BinaryOp);     \
  template TensorT<T> reduce<T>(const TensorT<T>&, ReduceOp);                                    \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,    \
                                int);                                                           \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);        \
  template std::pair<TensorT<T>, TensorT<T>> channel_split<T>(const TensorT<T>&, int64_t);      \
  template TensorT<T> channel_concat<T>(const TensorT<T>&, const TensorT<T>&);                   \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                                      \
  template void backward<T>(const TensorT<T>&);                                                  \
  template double grad_check<T>(const std::function<TensorT<T>()>&,                             \
                                const std::vector<TensorT<T>*>&, const GradCheckOptions&);

IRN_INSTANTIATE(float)
IRN_INSTANTIATE(double)

#undef IRN_INSTANTIATE

}  // namespace irn
