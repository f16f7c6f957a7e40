#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "segmate/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace segmate {

// Execution-side FLOP instrumentation. When a CountScope is open, kernels
// switch to serial reference loops that bump the counter as they go; the
// cost model's analytical numbers are checked against these counts exactly.
// Conventions (MAC = 2): conv/linear count every kernel tap including
// padding, +1 per output for bias; normalization and per-channel affine are
// 2/element; activations, elementwise and pooling visits are 1/element;
// bilinear resampling is 8/output (4 taps); nearest/concat are free.
namespace flops {

inline thread_local std::uint64_t counter = 0;
inline thread_local bool enabled = false;

struct CountScope {
  CountScope() {
    counter = 0;
    enabled = true;
  }
  ~CountScope() { enabled = false; }
  std::uint64_t count() const { return counter; }
};

inline void add(std::uint64_t n) { counter += n; }

}  // namespace flops

namespace ops {

namespace detail {

using segmate::detail::grad_enabled;

// C[M,N] += A[M,K] * B[K,N], all row-major. Deterministic for any thread
// count: each output element is accumulated by one thread in ascending k.
template <typename T>
void gemm_acc(int M, int N, int K, const T* A, const T* B, T* C, bool parallel) {
  constexpr int JB = 512;
  for (int j0 = 0; j0 < N; j0 += JB) {
    const int j1 = std::min(N, j0 + JB);
#pragma omp parallel for schedule(static) if (parallel)
    for (int i = 0; i < M; ++i) {
      T* crow = C + static_cast<std::size_t>(i) * N;
      const T* arow = A + static_cast<std::size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const T a = arow[k];
        const T* brow = B + static_cast<std::size_t>(k) * N;
        for (int j = j0; j < j1; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_bt_acc(int M, int N, int K, const T* A, const T* B, T* C, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < M; ++i) {
    const T* arow = A + static_cast<std::size_t>(i) * K;
    T* crow = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* brow = B + static_cast<std::size_t>(j) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int dil, int OH, int OW, T* col) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    const T* src = x + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++row) {
        T* dst = col + static_cast<std::size_t>(row) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i * dil;
          T* drow = dst + static_cast<std::size_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::fill(drow, drow + OW, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * W;
          const int off = j * dil - pad;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride + off;
            drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int dil, int OH, int OW, T* x) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    T* dst = x + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++row) {
        const T* src = col + static_cast<std::size_t>(row) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i * dil;
          if (ih < 0 || ih >= H) continue;
          const T* srow = src + static_cast<std::size_t>(oh) * OW;
          T* drow = dst + static_cast<std::size_t>(ih) * W;
          const int off = j * dil - pad;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride + off;
            if (iw >= 0 && iw < W) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

inline int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

}  // namespace detail

// ----- convolution ---------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int padding = 0, int dilation = 1) {
  check_shape(x.ndim() == 4, "conv2d input must be N,C,H,W, got " + shape_str(x.shape()));
  check_shape(w.ndim() == 4, "conv2d weight must be Cout,Cin,kh,kw, got " + shape_str(w.shape()));
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check_shape(w.dim(1) == Cin, "conv2d channel mismatch: input has " + std::to_string(Cin) +
                                   ", weight expects " + std::to_string(w.dim(1)));
  check_shape(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel dims must be odd");
  check_shape(b.ndim() == 1 && b.dim(0) == Cout, "conv2d bias must be length Cout");
  if (stride < 1 || padding < 0 || dilation < 1)
    fail(ErrorKind::Shape, "conv2d invalid stride/padding/dilation");
  const int OH = detail::conv_out_dim(H, kh, stride, padding, dilation);
  const int OW = detail::conv_out_dim(W, kw, stride, padding, dilation);
  check_shape(OH >= 1 && OW >= 1, "conv2d output would be empty for input " + shape_str(x.shape()));

  Tensor<T> out({N, Cout, OH, OW});
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  const std::size_t in_sz = static_cast<std::size_t>(Cin) * H * W;
  const std::size_t out_sz = static_cast<std::size_t>(Cout) * OH * OW;

  if (flops::enabled) {
    // serial reference kernel; counts every tap, padded or not
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Cout; ++co) {
        for (int oh = 0; oh < OH; ++oh) {
          for (int ow = 0; ow < OW; ++ow) {
            T acc = T(0);
            for (int ci = 0; ci < Cin; ++ci) {
              for (int i = 0; i < kh; ++i) {
                const int ih = oh * stride - padding + i * dilation;
                for (int j = 0; j < kw; ++j) {
                  const int iw = ow * stride - padding + j * dilation;
                  flops::add(2);
                  if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                    acc += wp[((static_cast<std::size_t>(co) * Cin + ci) * kh + i) * kw + j] *
                           xp[n * in_sz + (static_cast<std::size_t>(ci) * H + ih) * W + iw];
                }
              }
            }
            flops::add(1);
            op[n * out_sz + (static_cast<std::size_t>(co) * OH + oh) * OW + ow] = acc + bp[co];
          }
        }
      }
    }
  } else {
    const int K = Cin * kh * kw;
    const int HW = OH * OW;
    const bool par_batch = N > 1;
#pragma omp parallel if (par_batch)
    {
      std::vector<T> col(static_cast<std::size_t>(K) * HW);
#pragma omp for schedule(static)
      for (int n = 0; n < N; ++n) {
        detail::im2col(xp + n * in_sz, Cin, H, W, kh, kw, stride, padding, dilation, OH, OW,
                       col.data());
        T* o = op + n * out_sz;
        detail::gemm_acc(Cout, HW, K, wp, col.data(), o, !par_batch);
        for (int co = 0; co < Cout; ++co) {
          const T bias = bp[co];
          T* orow = o + static_cast<std::size_t>(co) * HW;
          for (int p = 0; p < HW; ++p) orow[p] += bias;
        }
      }
    }
  }

  if (detail::grad_enabled(x, w, b)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    Tape<T>::active()->record([xc, wc, bc, oc, stride, padding, dilation]() mutable {
      const int N = xc.dim(0), Cin = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int Cout = wc.dim(0), kh = wc.dim(2), kw = wc.dim(3);
      const int OH = oc.dim(2), OW = oc.dim(3);
      const int K = Cin * kh * kw, HW = OH * OW;
      const std::size_t in_sz = static_cast<std::size_t>(Cin) * H * W;
      const std::size_t out_sz = static_cast<std::size_t>(Cout) * OH * OW;
      const T* gy = oc.grad().data();
      if (bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Cout; ++co) {
            const T* grow = gy + n * out_sz + static_cast<std::size_t>(co) * HW;
            T acc = T(0);
            for (int p = 0; p < HW; ++p) acc += grow[p];
            gb[co] += acc;
          }
      }
      if (wc.requires_grad()) {
        T* gw = wc.grad().data();
        std::vector<T> col(static_cast<std::size_t>(K) * HW);
        for (int n = 0; n < N; ++n) {  // sequential over batch: fixed reduction order
          detail::im2col(xc.data().data() + n * in_sz, Cin, H, W, kh, kw, stride, padding,
                         dilation, OH, OW, col.data());
          detail::gemm_bt_acc(Cout, K, HW, gy + n * out_sz, col.data(), gw, true);
        }
      }
      if (xc.requires_grad()) {
        std::vector<T> wt(static_cast<std::size_t>(K) * Cout);
        const T* wp = wc.data().data();
        for (int co = 0; co < Cout; ++co)
          for (int k = 0; k < K; ++k) wt[static_cast<std::size_t>(k) * Cout + co] =
              wp[static_cast<std::size_t>(co) * K + k];
        T* gx = xc.grad().data();
#pragma omp parallel if (N > 1)
        {
          std::vector<T> gcol(static_cast<std::size_t>(K) * HW);
#pragma omp for schedule(static)
          for (int n = 0; n < N; ++n) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            detail::gemm_acc(K, HW, Cout, wt.data(), gy + n * out_sz, gcol.data(), N == 1);
            detail::col2im_acc(gcol.data(), Cin, H, W, kh, kw, stride, padding, dilation, OH, OW,
                               gx + n * in_sz);
          }
        }
      }
    });
  }
  return out;
}

// ----- batch normalization --------------------------------------------------

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
  check_shape(x.ndim() == 4, "batch_norm input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (const Tensor<T>* p :
       {&gamma, &beta, const_cast<const Tensor<T>*>(&running_mean),
        const_cast<const Tensor<T>*>(&running_var)})
    check_shape(p->ndim() == 1 && p->dim(0) == C,
                "batch_norm parameter length must equal C=" + std::to_string(C));

  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t csz = plane;
  const std::size_t nsz = static_cast<std::size_t>(C) * plane;
  const std::int64_t cnt = static_cast<std::int64_t>(N) * H * W;

  std::vector<T> mean(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double m = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* row = xp + n * nsz + c * csz;
        for (std::size_t p = 0; p < plane; ++p) m += row[p];
      }
      m /= static_cast<double>(cnt);
      double v = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* row = xp + n * nsz + c * csz;
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = row[p] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(cnt);  // biased, used for normalization
      mean[c] = static_cast<T>(m);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      const double unbiased = cnt > 1 ? v * cnt / (cnt - 1) : v;
      running_mean.data()[c] =
          static_cast<T>((1 - momentum) * running_mean.data()[c] + momentum * m);
      running_var.data()[c] =
          static_cast<T>((1 - momentum) * running_var.data()[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.data()[c]) +
                                                 static_cast<double>(eps)));
    }
  }

  const T* gp = gamma.data().data();
  const T* bp = beta.data().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T scale = gp[c] * invstd[c];
      const T shift = bp[c] - mean[c] * scale;
      const T* row = xp + n * nsz + c * csz;
      T* orow = op + n * nsz + c * csz;
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(2);
        orow[p] = row[p] * scale + shift;
      }
    }

  if (detail::grad_enabled(x, gamma, beta)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
    Tape<T>::active()->record([xc, gc, bc, oc, mean, invstd, training]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      const std::size_t nsz = static_cast<std::size_t>(C) * plane;
      const std::int64_t cnt = static_cast<std::int64_t>(N) * H * W;
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* gp = gc.data().data();
      for (int c = 0; c < C; ++c) {
        // per-channel reductions over the batch
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* grow = gy + n * nsz + c * plane;
          const T* xrow = xp + n * nsz + c * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const double xh = (xrow[p] - mean[c]) * invstd[c];
            sum_gy += grow[p];
            sum_gy_xhat += grow[p] * xh;
          }
        }
        if (gc.requires_grad()) gc.grad()[c] += static_cast<T>(sum_gy_xhat);
        if (bc.requires_grad()) bc.grad()[c] += static_cast<T>(sum_gy);
        if (xc.requires_grad()) {
          T* gx = xc.grad().data();
          const double g = gp[c], is = invstd[c];
          const double mg = sum_gy / cnt, mgx = sum_gy_xhat / cnt;
          for (int n = 0; n < N; ++n) {
            const T* grow = gy + n * nsz + c * plane;
            const T* xrow = xp + n * nsz + c * plane;
            T* gxrow = gx + n * nsz + c * plane;
            if (training) {
              for (std::size_t p = 0; p < plane; ++p) {
                const double xh = (xrow[p] - mean[c]) * is;
                gxrow[p] += static_cast<T>(g * is * (grow[p] - mg - xh * mgx));
              }
            } else {
              for (std::size_t p = 0; p < plane; ++p)
                gxrow[p] += static_cast<T>(g * is * grow[p]);
            }
          }
        }
      }
    });
  }
  return out;
}

// ----- elementwise ----------------------------------------------------------

namespace detail {

// shared scaffolding for unary elementwise ops: fwd(x) and dfdx(x, y)
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const Tensor<T>& x, F fwd, DF dfdx) {
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t n = static_cast<std::size_t>(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    if (flops::enabled) flops::add(1);
    op[i] = fwd(xp[i]);
  }
  if (grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, dfdx]() mutable {
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* yp = oc.data().data();
      T* gx = xc.grad().data();
      const std::size_t n = static_cast<std::size_t>(xc.numel());
      for (std::size_t i = 0; i < n; ++i) gx[i] += dfdx(xp[i], yp[i]) * gy[i];
    });
  }
  return out;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, F fwd, DA dda, DB ddb,
                    const char* opname) {
  check_shape(a.shape() == b.shape(), std::string(opname) + " shape mismatch: " +
                                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  const std::size_t n = static_cast<std::size_t>(a.numel());
  for (std::size_t i = 0; i < n; ++i) {
    if (flops::enabled) flops::add(1);
    op[i] = fwd(ap[i], bp[i]);
  }
  if (grad_enabled(a, b)) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    Tape<T>::active()->record([ac, bc, oc, dda, ddb]() mutable {
      const T* gy = oc.grad().data();
      const T* ap = ac.data().data();
      const T* bp = bc.data().data();
      const std::size_t n = static_cast<std::size_t>(ac.numel());
      if (ac.requires_grad()) {
        T* ga = ac.grad().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += dda(ap[i], bp[i]) * gy[i];
      }
      if (bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += ddb(ap[i], bp[i]) * gy[i];
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; },
      "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); }, "div");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::unary_op(
      x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary_op(
      x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// s - x
template <typename T>
Tensor<T> rsub_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, [s](T v) { return s - v; }, [](T, T) { return T(-1); });
}

// ----- pooling --------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "global_avg_pool input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C});
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* row = xp + (static_cast<std::size_t>(n) * C + c) * plane;
      T acc = T(0);
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(1);
        acc += row[p];
      }
      op[static_cast<std::size_t>(n) * C + c] = acc / static_cast<T>(plane);
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T g = gy[static_cast<std::size_t>(n) * C + c] / static_cast<T>(plane);
          T* row = gx + (static_cast<std::size_t>(n) * C + c) * plane;
          for (std::size_t p = 0; p < plane; ++p) row[p] += g;
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "global_max_pool input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(N) * C);
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      T best = xp[base];
      std::size_t bi = 0;
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(1);
        if (xp[base + p] > best) {  // first max wins ties
          best = xp[base + p];
          bi = p;
        }
      }
      op[static_cast<std::size_t>(n) * C + c] = best;
      arg[static_cast<std::size_t>(n) * C + c] = static_cast<std::int64_t>(base + bi);
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, arg]() mutable {
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
    });
  }
  return out;
}

namespace detail {

template <typename T>
void check_pool_args(const Tensor<T>& x, int kernel, int stride) {
  check_shape(x.ndim() == 4, "pool input must be N,C,H,W");
  if (kernel < 1 || stride < 1) fail(ErrorKind::Shape, "pool kernel/stride must be >= 1");
  check_shape(kernel <= x.dim(2) && kernel <= x.dim(3),
              "pool kernel " + std::to_string(kernel) + " larger than input " +
                  shape_str(x.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride) {
  detail::check_pool_args(x, kernel, stride);
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  Tensor<T> out({N, C, OH, OW});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.numel()));
  const T* xp = x.data().data();
  T* op = out.data().data();
  std::size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* pl = xp + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          T best = std::numeric_limits<T>::lowest();
          std::int64_t bi = -1;
          for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) {
              if (flops::enabled) flops::add(1);
              const std::size_t idx =
                  static_cast<std::size_t>(oh * stride + i) * W + (ow * stride + j);
              if (pl[idx] > best) {
                best = pl[idx];
                bi = static_cast<std::int64_t>((pl - xp) + idx);
              }
            }
          op[oi] = best;
          arg[oi] = bi;
        }
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, arg]() mutable {
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int kernel, int stride) {
  detail::check_pool_args(x, kernel, stride);
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  Tensor<T> out({N, C, OH, OW});
  const T* xp = x.data().data();
  T* op = out.data().data();
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  std::size_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* pl = xp + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          T acc = T(0);
          for (int i = 0; i < kernel; ++i)
            for (int j = 0; j < kernel; ++j) {
              if (flops::enabled) flops::add(1);
              acc += pl[static_cast<std::size_t>(oh * stride + i) * W + (ow * stride + j)];
            }
          op[oi] = acc * inv;
        }
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, kernel, stride]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OH = oc.dim(2), OW = oc.dim(3);
      const T inv = T(1) / static_cast<T>(kernel * kernel);
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      std::size_t oi = 0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          T* pl = gx + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow, ++oi) {
              const T g = gy[oi] * inv;
              for (int i = 0; i < kernel; ++i)
                for (int j = 0; j < kernel; ++j)
                  pl[static_cast<std::size_t>(oh * stride + i) * W + (ow * stride + j)] += g;
            }
        }
    });
  }
  return out;
}

// mean over the channel axis: N,C,H,W -> N,1,H,W
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "channel_mean input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, 1, H, W});
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T acc = T(0);
      for (int c = 0; c < C; ++c) {
        if (flops::enabled) flops::add(1);
        acc += xp[(static_cast<std::size_t>(n) * C + c) * plane + p];
      }
      op[n * plane + p] = acc / static_cast<T>(C);
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int n = 0; n < N; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
          const T g = gy[n * plane + p] / static_cast<T>(C);
          for (int c = 0; c < C; ++c) gx[(static_cast<std::size_t>(n) * C + c) * plane + p] += g;
        }
    });
  }
  return out;
}

// max over the channel axis: N,C,H,W -> N,1,H,W
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "channel_max input must be N,C,H,W");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, 1, H, W});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(out.numel()));
  const T* xp = x.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T best = xp[static_cast<std::size_t>(n) * C * plane + p];
      int bc = 0;
      for (int c = 0; c < C; ++c) {
        if (flops::enabled) flops::add(1);
        const T v = xp[(static_cast<std::size_t>(n) * C + c) * plane + p];
        if (v > best) {
          best = v;
          bc = c;
        }
      }
      op[n * plane + p] = best;
      arg[n * plane + p] =
          static_cast<std::int64_t>((static_cast<std::size_t>(n) * C + bc) * plane + p);
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, arg]() mutable {
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
    });
  }
  return out;
}

// ----- resampling -----------------------------------------------------------

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  check_shape(x.ndim() == 4, "upsample input must be N,C,H,W");
  if (factor < 1) fail(ErrorKind::Shape, "upsample factor must be >= 1");
  if (factor == 1) return x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C, H * factor, W * factor});
  const T* xp = x.data().data();
  T* op = out.data().data();
  const int OW = W * factor;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = xp + static_cast<std::size_t>(nc) * H * W;
    T* dst = op + static_cast<std::size_t>(nc) * H * W * factor * factor;
    for (int oh = 0; oh < H * factor; ++oh) {
      const T* srow = src + static_cast<std::size_t>(oh / factor) * W;
      T* drow = dst + static_cast<std::size_t>(oh) * OW;
      for (int ow = 0; ow < OW; ++ow) drow[ow] = srow[ow / factor];
    }
  }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, factor]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OW = W * factor;
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int nc = 0; nc < N * C; ++nc) {
        T* dst = gx + static_cast<std::size_t>(nc) * H * W;
        const T* src = gy + static_cast<std::size_t>(nc) * H * W * factor * factor;
        for (int oh = 0; oh < H * factor; ++oh)
          for (int ow = 0; ow < OW; ++ow)
            dst[static_cast<std::size_t>(oh / factor) * W + ow / factor] +=
                src[static_cast<std::size_t>(oh) * OW + ow];
      }
    });
  }
  return out;
}

namespace detail {

// align_corners=false source coordinate and weights for one output index
template <typename T>
inline void bilinear_taps(int o, int factor, int size, int& i0, int& i1, T& w1) {
  const T s = (o + T(0.5)) / factor - T(0.5);
  T fl = std::floor(s);
  w1 = s - fl;
  i0 = static_cast<int>(fl);
  i1 = i0 + 1;
  i0 = std::clamp(i0, 0, size - 1);
  i1 = std::clamp(i1, 0, size - 1);
}

}  // namespace detail

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int factor) {
  check_shape(x.ndim() == 4, "upsample input must be N,C,H,W");
  if (factor < 1) fail(ErrorKind::Shape, "upsample factor must be >= 1");
  if (factor == 1) return x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H * factor, OW = W * factor;
  Tensor<T> out({N, C, OH, OW});
  const T* xp = x.data().data();
  T* op = out.data().data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* src = xp + static_cast<std::size_t>(nc) * H * W;
    T* dst = op + static_cast<std::size_t>(nc) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      int y0, y1;
      T wy;
      detail::bilinear_taps(oh, factor, H, y0, y1, wy);
      for (int ow = 0; ow < OW; ++ow) {
        int x0, x1;
        T wx;
        detail::bilinear_taps(ow, factor, W, x0, x1, wx);
        if (flops::enabled) flops::add(8);
        dst[static_cast<std::size_t>(oh) * OW + ow] =
            (T(1) - wy) * ((T(1) - wx) * src[static_cast<std::size_t>(y0) * W + x0] +
                           wx * src[static_cast<std::size_t>(y0) * W + x1]) +
            wy * ((T(1) - wx) * src[static_cast<std::size_t>(y1) * W + x0] +
                  wx * src[static_cast<std::size_t>(y1) * W + x1]);
      }
    }
  }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc, factor]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OH = H * factor, OW = W * factor;
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int nc = 0; nc < N * C; ++nc) {
        T* dst = gx + static_cast<std::size_t>(nc) * H * W;
        const T* src = gy + static_cast<std::size_t>(nc) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          int y0, y1;
          T wy;
          detail::bilinear_taps(oh, factor, H, y0, y1, wy);
          for (int ow = 0; ow < OW; ++ow) {
            int x0, x1;
            T wx;
            detail::bilinear_taps(ow, factor, W, x0, x1, wx);
            const T g = src[static_cast<std::size_t>(oh) * OW + ow];
            dst[static_cast<std::size_t>(y0) * W + x0] += (T(1) - wy) * (T(1) - wx) * g;
            dst[static_cast<std::size_t>(y0) * W + x1] += (T(1) - wy) * wx * g;
            dst[static_cast<std::size_t>(y1) * W + x0] += wy * (T(1) - wx) * g;
            dst[static_cast<std::size_t>(y1) * W + x1] += wy * wx * g;
          }
        }
      }
    });
  }
  return out;
}

// ----- linear / concat ------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_shape(x.ndim() == 2, "linear input must be N,Fin, got " + shape_str(x.shape()));
  check_shape(w.ndim() == 2, "linear weight must be Fout,Fin");
  const int N = x.dim(0), Fin = x.dim(1), Fout = w.dim(0);
  check_shape(w.dim(1) == Fin, "linear dimension mismatch: input Fin=" + std::to_string(Fin) +
                                   ", weight expects " + std::to_string(w.dim(1)));
  check_shape(b.ndim() == 1 && b.dim(0) == Fout, "linear bias must be length Fout");
  Tensor<T> out({N, Fout});
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < Fout; ++f) {
      T acc = T(0);
      const T* xr = xp + static_cast<std::size_t>(n) * Fin;
      const T* wr = wp + static_cast<std::size_t>(f) * Fin;
      for (int k = 0; k < Fin; ++k) {
        if (flops::enabled) flops::add(2);
        acc += xr[k] * wr[k];
      }
      if (flops::enabled) flops::add(1);
      op[static_cast<std::size_t>(n) * Fout + f] = acc + bp[f];
    }
  if (detail::grad_enabled(x, w, b)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, oc = out;
    Tape<T>::active()->record([xc, wc, bc, oc]() mutable {
      const int N = xc.dim(0), Fin = xc.dim(1), Fout = wc.dim(0);
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* wp = wc.data().data();
      if (xc.requires_grad()) {
        T* gx = xc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < Fout; ++f) {
            const T g = gy[static_cast<std::size_t>(n) * Fout + f];
            const T* wr = wp + static_cast<std::size_t>(f) * Fin;
            T* gr = gx + static_cast<std::size_t>(n) * Fin;
            for (int k = 0; k < Fin; ++k) gr[k] += g * wr[k];
          }
      }
      if (wc.requires_grad()) {
        T* gw = wc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < Fout; ++f) {
            const T g = gy[static_cast<std::size_t>(n) * Fout + f];
            const T* xr = xp + static_cast<std::size_t>(n) * Fin;
            T* gr = gw + static_cast<std::size_t>(f) * Fin;
            for (int k = 0; k < Fin; ++k) gr[k] += g * xr[k];
          }
      }
      if (bc.requires_grad()) {
        T* gb = bc.grad().data();
        for (int n = 0; n < N; ++n)
          for (int f = 0; f < Fout; ++f) gb[f] += gy[static_cast<std::size_t>(n) * Fout + f];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& ts, int axis) {
  if (ts.empty()) fail(ErrorKind::Shape, "concat of zero tensors");
  const int nd = ts[0].ndim();
  if (axis < 0 || axis >= nd) fail(ErrorKind::Shape, "concat axis out of range");
  Shape out_shape = ts[0].shape();
  for (std::size_t i = 1; i < ts.size(); ++i) {
    check_shape(ts[i].ndim() == nd, "concat rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis)
        check_shape(ts[i].dim(d) == ts[0].dim(d),
                    "concat shape mismatch on axis " + std::to_string(d) + ": " +
                        shape_str(ts[i].shape()) + " vs " + shape_str(ts[0].shape()));
    out_shape[static_cast<std::size_t>(axis)] += ts[i].dim(axis);
  }
  Tensor<T> out(out_shape);

  // outer = product of dims before axis, inner = product after
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= ts[0].dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= ts[0].dim(d);
  const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];

  T* op = out.data().data();
  std::int64_t offset = 0;
  for (const auto& t : ts) {
    const std::int64_t ax = t.dim(axis);
    const T* tp = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy(tp + o * ax * inner, tp + (o + 1) * ax * inner,
                op + (o * out_axis + offset) * inner);
    offset += ax;
  }

  bool needs = false;
  for (const auto& t : ts) needs = needs || detail::grad_enabled(t);
  if (needs) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> tc = ts;
    Tensor<T> oc = out;
    Tape<T>::active()->record([tc, oc, axis, outer, inner, out_axis]() mutable {
      const T* gy = oc.grad().data();
      std::int64_t offset = 0;
      for (auto& t : tc) {
        const std::int64_t ax = t.dim(axis);
        if (t.requires_grad()) {
          T* gt = t.grad().data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = gy + (o * out_axis + offset) * inner;
            T* dst = gt + o * ax * inner;
            for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
          }
        }
        offset += ax;
      }
    });
  }
  return out;
}

// ----- broadcasting helpers used by the attention/conditioning blocks -------

// x[N,C,H,W] * s[N,C], s broadcast over H,W
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  check_shape(x.ndim() == 4 && s.ndim() == 2 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1),
              "scale_channels expects x[N,C,H,W] and s[N,C]");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  const T* sp = s.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T sv = sp[static_cast<std::size_t>(n) * C + c];
      const T* row = xp + (static_cast<std::size_t>(n) * C + c) * plane;
      T* orow = op + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(1);
        orow[p] = row[p] * sv;
      }
    }
  if (detail::grad_enabled(x, s)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, sc = s, oc = out;
    Tape<T>::active()->record([xc, sc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* sp = sc.data().data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
          if (xc.requires_grad()) {
            const T sv = sp[static_cast<std::size_t>(n) * C + c];
            T* gx = xc.grad().data();
            for (std::size_t p = 0; p < plane; ++p) gx[base + p] += gy[base + p] * sv;
          }
          if (sc.requires_grad()) {
            T acc = T(0);
            for (std::size_t p = 0; p < plane; ++p) acc += gy[base + p] * xp[base + p];
            sc.grad()[static_cast<std::size_t>(n) * C + c] += acc;
          }
        }
    });
  }
  return out;
}

// y = gamma[N,C] * x + beta[N,C], broadcast over H,W (FiLM)
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  check_shape(x.ndim() == 4 && gamma.ndim() == 2 && beta.ndim() == 2 &&
                  gamma.dim(0) == x.dim(0) && gamma.dim(1) == x.dim(1) &&
                  beta.dim(0) == x.dim(0) && beta.dim(1) == x.dim(1),
              "channel_affine expects x[N,C,H,W], gamma[N,C], beta[N,C]");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  const T* gp = gamma.data().data();
  const T* bp = beta.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = gp[static_cast<std::size_t>(n) * C + c];
      const T b = bp[static_cast<std::size_t>(n) * C + c];
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(2);
        op[base + p] = xp[base + p] * g + b;
      }
    }
  if (detail::grad_enabled(x, gamma, beta)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
    Tape<T>::active()->record([xc, gc, bc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* gp = gc.data().data();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const std::size_t nc = static_cast<std::size_t>(n) * C + c;
          const std::size_t base = nc * plane;
          if (xc.requires_grad()) {
            T* gx = xc.grad().data();
            const T g = gp[nc];
            for (std::size_t p = 0; p < plane; ++p) gx[base + p] += gy[base + p] * g;
          }
          if (gc.requires_grad()) {
            T acc = T(0);
            for (std::size_t p = 0; p < plane; ++p) acc += gy[base + p] * xp[base + p];
            gc.grad()[nc] += acc;
          }
          if (bc.requires_grad()) {
            T acc = T(0);
            for (std::size_t p = 0; p < plane; ++p) acc += gy[base + p];
            bc.grad()[nc] += acc;
          }
        }
    });
  }
  return out;
}

// x[N,C,H,W] * m[N,1,H,W], m broadcast over C
template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  check_shape(x.ndim() == 4 && m.ndim() == 4 && m.dim(0) == x.dim(0) && m.dim(1) == 1 &&
                  m.dim(2) == x.dim(2) && m.dim(3) == x.dim(3),
              "scale_spatial expects x[N,C,H,W] and m[N,1,H,W]");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  const T* mp = m.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      const T* mrow = mp + static_cast<std::size_t>(n) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (flops::enabled) flops::add(1);
        op[base + p] = xp[base + p] * mrow[p];
      }
    }
  if (detail::grad_enabled(x, m)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, mc = m, oc = out;
    Tape<T>::active()->record([xc, mc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      const T* xp = xc.data().data();
      const T* mp = mc.data().data();
      for (int n = 0; n < N; ++n) {
        const T* mrow = mp + static_cast<std::size_t>(n) * plane;
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
          if (xc.requires_grad()) {
            T* gx = xc.grad().data();
            for (std::size_t p = 0; p < plane; ++p) gx[base + p] += gy[base + p] * mrow[p];
          }
          if (mc.requires_grad()) {
            T* gm = mc.grad().data() + static_cast<std::size_t>(n) * plane;
            for (std::size_t p = 0; p < plane; ++p) gm[p] += gy[base + p] * xp[base + p];
          }
        }
      }
    });
  }
  return out;
}

// v[N,C] replicated over an H×W grid -> N,C,H,W (no FLOPs, pure copy)
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, int H, int W) {
  check_shape(v.ndim() == 2, "broadcast_spatial input must be N,C");
  const int N = v.dim(0), C = v.dim(1);
  Tensor<T> out({N, C, H, W});
  const T* vp = v.data().data();
  T* op = out.data().data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int nc = 0; nc < N * C; ++nc)
    std::fill(op + nc * plane, op + (nc + 1) * plane, vp[nc]);
  if (detail::grad_enabled(v)) {
    out.set_requires_grad(true);
    Tensor<T> vc = v, oc = out;
    Tape<T>::active()->record([vc, oc]() mutable {
      const int NC = vc.dim(0) * vc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(oc.dim(2)) * oc.dim(3);
      const T* gy = oc.grad().data();
      T* gv = vc.grad().data();
      for (int nc = 0; nc < NC; ++nc) {
        T acc = T(0);
        for (std::size_t p = 0; p < plane; ++p) acc += gy[nc * plane + p];
        gv[nc] += acc;
      }
    });
  }
  return out;
}

// ----- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out({1});
  T acc = T(0);
  for (T v : x.data()) acc += v;
  out.data()[0] = acc;
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const T g = oc.grad()[0];
      T* gx = xc.grad().data();
      const std::size_t n = static_cast<std::size_t>(xc.numel());
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  Tensor<T> s = sum(x);
  return scalar_mul(s, T(1) / static_cast<T>(x.numel()));
}

// sum over N,H,W per class: N,K,H,W -> K
template <typename T>
Tensor<T> sum_per_class(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "sum_per_class input must be N,K,H,W");
  const int N = x.dim(0), K = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({K});
  const T* xp = x.data().data();
  T* op = out.data().data();
  for (int k = 0; k < K; ++k) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* row = xp + (static_cast<std::size_t>(n) * K + k) * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += row[p];
    }
    op[k] = static_cast<T>(acc);
  }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const int N = xc.dim(0), K = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          const T g = gy[k];
          T* row = gx + (static_cast<std::size_t>(n) * K + k) * plane;
          for (std::size_t p = 0; p < plane; ++p) row[p] += g;
        }
    });
  }
  return out;
}

// sum over the class axis per pixel: N,K,H,W -> N,1,H,W
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "sum_channels input must be N,K,H,W");
  const int N = x.dim(0), K = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({N, 1, x.dim(2), x.dim(3)});
  const T* xp = x.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += xp[(static_cast<std::size_t>(n) * K + k) * plane + p];
      op[n * plane + p] = acc;
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const int N = xc.dim(0), K = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      T* gx = xc.grad().data();
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          T* row = gx + (static_cast<std::size_t>(n) * K + k) * plane;
          const T* grow = gy + static_cast<std::size_t>(n) * plane;
          for (std::size_t p = 0; p < plane; ++p) row[p] += grow[p];
        }
    });
  }
  return out;
}

// softmax over the class axis of N,K,H,W
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  check_shape(x.ndim() == 4, "softmax_channels input must be N,K,H,W");
  const int N = x.dim(0), K = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* op = out.data().data();
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = xp[static_cast<std::size_t>(n) * K * plane + p];
      for (int k = 1; k < K; ++k)
        mx = std::max(mx, xp[(static_cast<std::size_t>(n) * K + k) * plane + p]);
      T denom = T(0);
      for (int k = 0; k < K; ++k) {
        const T e = std::exp(xp[(static_cast<std::size_t>(n) * K + k) * plane + p] - mx);
        op[(static_cast<std::size_t>(n) * K + k) * plane + p] = e;
        denom += e;
      }
      for (int k = 0; k < K; ++k) op[(static_cast<std::size_t>(n) * K + k) * plane + p] /= denom;
    }
  if (detail::grad_enabled(x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    Tape<T>::active()->record([xc, oc]() mutable {
      const int N = xc.dim(0), K = xc.dim(1);
      const std::size_t plane = static_cast<std::size_t>(xc.dim(2)) * xc.dim(3);
      const T* gy = oc.grad().data();
      const T* yp = oc.data().data();
      T* gx = xc.grad().data();
      for (int n = 0; n < N; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
          T dot = T(0);
          for (int k = 0; k < K; ++k) {
            const std::size_t i = (static_cast<std::size_t>(n) * K + k) * plane + p;
            dot += gy[i] * yp[i];
          }
          for (int k = 0; k < K; ++k) {
            const std::size_t i = (static_cast<std::size_t>(n) * K + k) * plane + p;
            gx[i] += yp[i] * (gy[i] - dot);
          }
        }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace segmate
