#pragma once

#include <string>
#include <vector>

#include "segmate/ops.hpp"

namespace segmate {

// Named handle to one parameter tensor. BN running statistics are collected
// with trainable=false: they travel with checkpoints but skip the optimizer.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

namespace init {

template <typename T>
Tensor<T> he_conv(Rng& rng, int cout, int cin, int kh, int kw) {
  const T std = static_cast<T>(std::sqrt(2.0 / (static_cast<double>(cin) * kh * kw)));
  return Tensor<T>::randn({cout, cin, kh, kw}, rng, std);
}

template <typename T>
Tensor<T> he_linear(Rng& rng, int fout, int fin) {
  const T std = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fin)));
  return Tensor<T>::randn({fout, fin}, rng, std);
}

}  // namespace init

// ----- parameter bundles ----------------------------------------------------

template <typename T>
struct Conv2dParams {
  Tensor<T> w, b;
  int stride = 1, padding = 0, dilation = 1;

  static Conv2dParams make(Rng& rng, int cout, int cin, int k, int stride = 1, int padding = 0,
                           int dilation = 1) {
    Conv2dParams p;
    p.w = init::he_conv<T>(rng, cout, cin, k, k);
    p.b = Tensor<T>::zeros({cout});
    p.stride = stride;
    p.padding = padding;
    p.dilation = dilation;
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".b", b, true});
  }
};

template <typename T>
struct LinearParams {
  Tensor<T> w, b;

  static LinearParams make(Rng& rng, int fout, int fin, bool zero_init = false) {
    LinearParams p;
    p.w = zero_init ? Tensor<T>::zeros({fout, fin}) : init::he_linear<T>(rng, fout, fin);
    p.b = Tensor<T>::zeros({fout});
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".b", b, true});
  }
};

template <typename T>
struct BnParams {
  Tensor<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BnParams make(int channels) {
    BnParams p;
    p.gamma = Tensor<T>::full({channels}, T(1));
    p.beta = Tensor<T>::zeros({channels});
    p.running_mean = Tensor<T>::zeros({channels});
    p.running_var = Tensor<T>::full({channels}, T(1));
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
  }
};

// conv -> BN -> SiLU, the basic unit of the encoder and decoder
template <typename T>
struct ConvBnParams {
  Conv2dParams<T> conv;
  BnParams<T> bn;

  static ConvBnParams make(Rng& rng, int cout, int cin, int k, int stride = 1, int padding = 0,
                           int dilation = 1) {
    ConvBnParams p;
    p.conv = Conv2dParams<T>::make(rng, cout, cin, k, stride, padding, dilation);
    p.bn = BnParams<T>::make(cout);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    conv.collect(prefix + ".conv", out);
    bn.collect(prefix + ".bn", out);
  }
};

// 3 slices in, 1 fused slice out: conv3x3(16) -> BN -> SiLU -> conv1x1(1)
template <typename T>
struct SliceFusionParams {
  Conv2dParams<T> conv1;  // 16 x 3 x 3 x 3
  BnParams<T> bn1;
  Conv2dParams<T> conv2;  // 1 x 16 x 1 x 1

  static SliceFusionParams make(Rng& rng) {
    SliceFusionParams p;
    p.conv1 = Conv2dParams<T>::make(rng, 16, 3, 3, 1, 1);
    p.bn1 = BnParams<T>::make(16);
    p.conv2 = Conv2dParams<T>::make(rng, 1, 16, 1);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
  }
};

// squeeze-and-excitation channel gate; bottleneck width = max(1, C/reduction)
template <typename T>
struct SeParams {
  LinearParams<T> reduce, expand;
  int reduction = 16;

  static SeParams make(Rng& rng, int channels, int reduction = 16) {
    SeParams p;
    p.reduction = reduction;
    const int mid = std::max(1, channels / reduction);
    p.reduce = LinearParams<T>::make(rng, mid, channels);
    p.expand = LinearParams<T>::make(rng, channels, mid);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
  }
};

// channel gate (shared MLP over avg+max descriptors) then 7x7 spatial gate.
// gate_scale is a diagnostic multiplier on the block output; 1 in production.
// With zeroed parameters both gates are exactly 0.5, so gate_scale=4 turns
// the block into an exact identity (both scalings are powers of two).
template <typename T>
struct CbamParams {
  LinearParams<T> mlp1, mlp2;
  Conv2dParams<T> spatial;  // 1 x 2 x 7 x 7
  int reduction = 16;
  T gate_scale = T(1);

  static CbamParams make(Rng& rng, int channels, int reduction = 16) {
    CbamParams p;
    p.reduction = reduction;
    const int mid = std::max(1, channels / reduction);
    p.mlp1 = LinearParams<T>::make(rng, mid, channels);
    p.mlp2 = LinearParams<T>::make(rng, channels, mid);
    p.spatial = Conv2dParams<T>::make(rng, 1, 2, 7, 1, 3);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    mlp1.collect(prefix + ".mlp1", out);
    mlp2.collect(prefix + ".mlp2", out);
    spatial.collect(prefix + ".spatial", out);
  }
};

// gamma/beta heads: 1 -> 128 -> 128 -> C with SiLU hidden activations.
// Output layers start at zero and the gamma head adds +1, so a fresh FiLM
// block is the identity.
template <typename T>
struct FilmParams {
  LinearParams<T> g1, g2, g3;
  LinearParams<T> b1, b2, b3;
  int hidden = 128;

  static FilmParams make(Rng& rng, int channels, int hidden = 128) {
    FilmParams p;
    p.hidden = hidden;
    p.g1 = LinearParams<T>::make(rng, hidden, 1);
    p.g2 = LinearParams<T>::make(rng, hidden, hidden);
    p.g3 = LinearParams<T>::make(rng, channels, hidden, /*zero_init=*/true);
    p.b1 = LinearParams<T>::make(rng, hidden, 1);
    p.b2 = LinearParams<T>::make(rng, hidden, hidden);
    p.b3 = LinearParams<T>::make(rng, channels, hidden, /*zero_init=*/true);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    g1.collect(prefix + ".g1", out);
    g2.collect(prefix + ".g2", out);
    g3.collect(prefix + ".g3", out);
    b1.collect(prefix + ".b1", out);
    b2.collect(prefix + ".b2", out);
    b3.collect(prefix + ".b3", out);
  }
};

// parallel dilated 3x3 branches + 1x1 branch + image-pooling branch, fused
// by a 1x1 conv down to the bottleneck width
template <typename T>
struct AsppParams {
  std::vector<ConvBnParams<T>> dilated;  // one per rate
  ConvBnParams<T> point;                 // 1x1 branch
  LinearParams<T> pool;                  // image-pooling branch on GAP vector
  ConvBnParams<T> fuse;                  // 1x1 fusion
  std::vector<int> rates;
  int branch_width = 0;

  static AsppParams make(Rng& rng, int cin, int bottleneck, const std::vector<int>& rates) {
    AsppParams p;
    p.rates = rates;
    p.branch_width = std::max(1, bottleneck / 4);
    for (int r : rates)
      p.dilated.push_back(ConvBnParams<T>::make(rng, p.branch_width, cin, 3, 1, r, r));
    p.point = ConvBnParams<T>::make(rng, p.branch_width, cin, 1);
    p.pool = LinearParams<T>::make(rng, p.branch_width, cin);
    const int cat = p.branch_width * (static_cast<int>(rates.size()) + 2);
    p.fuse = ConvBnParams<T>::make(rng, bottleneck, cat, 1);
    return p;
  }
  void collect(const std::string& prefix, ParamList<T>& out) {
    for (std::size_t i = 0; i < dilated.size(); ++i)
      dilated[i].collect(prefix + ".rate" + std::to_string(rates[i]), out);
    point.collect(prefix + ".point", out);
    pool.collect(prefix + ".pool", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

// ----- execution context ----------------------------------------------------

// Eager interpreter over Tensor<T>. The network forward is written once
// against this interface; the cost model provides a second, shape-only
// interpreter over the identical call sequence.
template <typename T>
struct Exec {
  using Scalar = T;
  using Value = Tensor<T>;

  Value conv2d(const std::string&, const Value& x, Conv2dParams<T>& p) {
    return ops::conv2d(x, p.w, p.b, p.stride, p.padding, p.dilation);
  }
  Value batch_norm(const std::string&, const Value& x, BnParams<T>& p, bool training) {
    return ops::batch_norm(x, p.gamma, p.beta, p.running_mean, p.running_var, training,
                           p.momentum, p.eps);
  }
  Value linear(const std::string&, const Value& x, LinearParams<T>& p) {
    return ops::linear(x, p.w, p.b);
  }
  Value silu(const Value& x) { return ops::silu(x); }
  Value relu(const Value& x) { return ops::relu(x); }
  Value sigmoid(const Value& x) { return ops::sigmoid(x); }
  Value add(const Value& a, const Value& b) { return ops::add(a, b); }
  Value scalar_mul(const Value& x, T s) { return ops::scalar_mul(x, s); }
  Value scalar_add(const Value& x, T s) { return ops::scalar_add(x, s); }
  Value global_avg_pool(const Value& x) { return ops::global_avg_pool(x); }
  Value global_max_pool(const Value& x) { return ops::global_max_pool(x); }
  Value channel_mean(const Value& x) { return ops::channel_mean(x); }
  Value channel_max(const Value& x) { return ops::channel_max(x); }
  Value upsample_bilinear(const Value& x, int f) { return ops::upsample_bilinear(x, f); }
  Value concat(const std::vector<Value>& vs, int axis) { return ops::concat(vs, axis); }
  Value scale_channels(const Value& x, const Value& s) { return ops::scale_channels(x, s); }
  Value scale_spatial(const Value& x, const Value& m) { return ops::scale_spatial(x, m); }
  Value channel_affine(const Value& x, const Value& g, const Value& b) {
    return ops::channel_affine(x, g, b);
  }
  Value broadcast_spatial(const Value& v, int h, int w) {
    return ops::broadcast_spatial(v, h, w);
  }
  int channels(const Value& x) const { return x.dim(1); }
  int height(const Value& x) const { return x.dim(2); }
  int width(const Value& x) const { return x.dim(3); }
};

// ----- blocks, written once against the context interface -------------------

template <class Ctx, typename T>
typename Ctx::Value conv_bn_silu(Ctx& cx, const std::string& name, const typename Ctx::Value& x,
                                 ConvBnParams<T>& p, bool bn_training) {
  auto y = cx.conv2d(name + ".conv", x, p.conv);
  y = cx.batch_norm(name + ".bn", y, p.bn, bn_training);
  return cx.silu(y);
}

template <class Ctx, typename T>
typename Ctx::Value slice_fusion(Ctx& cx, const typename Ctx::Value& x, SliceFusionParams<T>& p,
                                 bool bn_training, const std::string& name = "slice_fusion") {
  if (cx.channels(x) != 3)
    fail(ErrorKind::Shape,
         "slice_fusion expects a 3-slice stack, got " + std::to_string(cx.channels(x)) +
             " channels");
  auto y = cx.conv2d(name + ".conv1", x, p.conv1);
  y = cx.batch_norm(name + ".bn1", y, p.bn1, bn_training);
  y = cx.silu(y);
  return cx.conv2d(name + ".conv2", y, p.conv2);
}

template <class Ctx, typename T>
typename Ctx::Value se_gate(Ctx& cx, const typename Ctx::Value& x, SeParams<T>& p,
                            const std::string& name = "se") {
  auto d = cx.global_avg_pool(x);
  d = cx.relu(cx.linear(name + ".reduce", d, p.reduce));
  auto g = cx.sigmoid(cx.linear(name + ".expand", d, p.expand));
  return cx.scale_channels(x, g);
}

template <class Ctx, typename T>
typename Ctx::Value cbam(Ctx& cx, const typename Ctx::Value& x, CbamParams<T>& p,
                         const std::string& name = "cbam") {
  // channel gate from shared MLP over avg- and max-pooled descriptors
  auto mlp = [&](const typename Ctx::Value& d, const char* tag) {
    auto h = cx.relu(cx.linear(name + ".mlp1." + tag, d, p.mlp1));
    return cx.linear(name + ".mlp2." + tag, h, p.mlp2);
  };
  auto mc = cx.sigmoid(cx.add(mlp(cx.global_avg_pool(x), "avg"), mlp(cx.global_max_pool(x), "max")));
  auto xc = cx.scale_channels(x, mc);
  // spatial gate from [mean_c, max_c] through a 7x7 conv
  auto stacked = cx.concat({cx.channel_mean(xc), cx.channel_max(xc)}, 1);
  auto ms = cx.sigmoid(cx.conv2d(name + ".spatial", stacked, p.spatial));
  auto out = cx.scale_spatial(xc, ms);
  if (p.gate_scale != T(1)) out = cx.scalar_mul(out, p.gate_scale);
  return out;
}

template <class Ctx, typename T>
typename Ctx::Value film(Ctx& cx, const typename Ctx::Value& x, const typename Ctx::Value& z,
                         FilmParams<T>& p, const std::string& name = "film") {
  auto head = [&](LinearParams<T>& l1, LinearParams<T>& l2, LinearParams<T>& l3,
                  const char* tag) {
    auto h = cx.silu(cx.linear(name + "." + tag + "1", z, l1));
    h = cx.silu(cx.linear(name + "." + tag + "2", h, l2));
    return cx.linear(name + "." + tag + "3", h, l3);
  };
  auto gamma = cx.scalar_add(head(p.g1, p.g2, p.g3, "g"), T(1));
  auto beta = head(p.b1, p.b2, p.b3, "b");
  return cx.channel_affine(x, gamma, beta);
}

template <class Ctx, typename T>
typename Ctx::Value aspp(Ctx& cx, const typename Ctx::Value& x, AsppParams<T>& p,
                         bool bn_training, const std::string& name = "aspp") {
  const int h = cx.height(x), w = cx.width(x);
  std::vector<typename Ctx::Value> branches;
  for (std::size_t i = 0; i < p.dilated.size(); ++i)
    branches.push_back(conv_bn_silu(cx, name + ".rate" + std::to_string(p.rates[i]), x,
                                    p.dilated[i], bn_training));
  branches.push_back(conv_bn_silu(cx, name + ".point", x, p.point, bn_training));
  auto pooled = cx.silu(cx.linear(name + ".pool", cx.global_avg_pool(x), p.pool));
  branches.push_back(cx.broadcast_spatial(pooled, h, w));
  auto cat = cx.concat(branches, 1);
  return conv_bn_silu(cx, name + ".fuse", cat, p.fuse, bn_training);
}

// ----- eager one-tensor conveniences (the unit-test surface) -----------------

template <typename T>
Tensor<T> slice_fusion(const Tensor<T>& x, SliceFusionParams<T>& p, bool training = false) {
  Exec<T> cx;
  return slice_fusion(cx, x, p, training);
}

template <typename T>
Tensor<T> se_gate(const Tensor<T>& x, SeParams<T>& p) {
  Exec<T> cx;
  return se_gate(cx, x, p);
}

template <typename T>
Tensor<T> cbam(const Tensor<T>& x, CbamParams<T>& p) {
  Exec<T> cx;
  return cbam(cx, x, p);
}

template <typename T>
Tensor<T> film(const Tensor<T>& x, const Tensor<T>& z, FilmParams<T>& p) {
  for (T v : z.data())
    if (v < T(0) || v > T(1))
      fail(ErrorKind::Range, "z_norm must lie in [0,1], got " + std::to_string(v));
  Exec<T> cx;
  return film(cx, x, z, p);
}

template <typename T>
Tensor<T> film(const Tensor<T>& x, T z_norm, FilmParams<T>& p) {
  Tensor<T> z = Tensor<T>::full({x.dim(0), 1}, z_norm);
  return film(x, z, p);
}

template <typename T>
Tensor<T> aspp(const Tensor<T>& x, AsppParams<T>& p, bool training = false) {
  Exec<T> cx;
  return aspp(cx, x, p, training);
}

}  // namespace segmate
