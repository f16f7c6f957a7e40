#pragma once

#include <cstdint>
#include <vector>

#include "segmate/model.hpp"
#include "segmate/ops.hpp"

namespace segmate {

// Weights of the multi-task objective:
//   total = lambda_seg*seg + lambda_bdy*boundary + lambda_prs*presence
//   seg   = lambda_dice*(alpha*dice + (1-alpha)*focal) + lambda_ce*ce
// The defaults are working assumptions; every run logs the values it used.
template <typename T>
struct LossWeights {
  T lambda_seg = T(1);
  T lambda_bdy = T(0.5);
  T lambda_prs = T(0.2);
  T lambda_dice = T(1);
  T lambda_ce = T(1);
  T alpha = T(0.5);
  T focal_gamma = T(2);
  T dice_eps = T(1);
  bool dice_exclude_background = false;
  std::vector<T> per_class_weights;  // empty = uniform

  void validate(int num_classes) const {
    for (T v : {lambda_seg, lambda_bdy, lambda_prs, lambda_dice, lambda_ce, focal_gamma})
      if (v < T(0)) fail(ErrorKind::Config, "loss weights must be >= 0");
    if (alpha < T(0) || alpha > T(1)) fail(ErrorKind::Config, "alpha must lie in [0,1]");
    if (!per_class_weights.empty() &&
        per_class_weights.size() != static_cast<std::size_t>(num_classes))
      fail(ErrorKind::Config, "per_class_weights must have one entry per class");
    for (T v : per_class_weights)
      if (v < T(0)) fail(ErrorKind::Config, "per_class_weights must be >= 0");
  }
};

namespace losses {

template <typename T>
void check_labels(const std::vector<int>& labels, int num_classes) {
  for (int v : labels)
    if (v < 0 || v >= num_classes)
      fail(ErrorKind::Data,
           "label " + std::to_string(v) + " outside [0," + std::to_string(num_classes) + ")");
}

template <typename T>
Tensor<T> one_hot(const std::vector<int>& labels, int n, int k, int h, int w) {
  check_labels<T>(labels, k);
  Tensor<T> t({n, k, h, w});
  auto d = t.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (std::size_t p = 0; p < plane; ++p)
      d[(static_cast<std::size_t>(i) * k + labels[i * plane + p]) * plane + p] = T(1);
  return t;
}

// per-pixel weight by true class, as a constant N,1,H,W map
template <typename T>
Tensor<T> weight_map(const std::vector<int>& labels, int n, int h, int w,
                     const std::vector<T>& per_class) {
  Tensor<T> t({n, 1, h, w});
  auto d = t.data();
  for (std::size_t i = 0; i < labels.size(); ++i)
    d[i] = per_class.empty() ? T(1) : per_class[static_cast<std::size_t>(labels[i])];
  return t;
}

// 1 - weighted mean over classes of (2*intersection + eps)/(sum p + sum t + eps)
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot, T eps,
                    const std::vector<T>& class_weights = {}, bool exclude_background = false) {
  check_shape(probs.shape() == target_onehot.shape(),
              "dice_loss shape mismatch: " + shape_str(probs.shape()) + " vs " +
                  shape_str(target_onehot.shape()));
  const int k = probs.dim(1);
  auto inter = ops::sum_per_class(ops::mul(probs, target_onehot));
  auto psum = ops::sum_per_class(probs);
  auto tsum = ops::sum_per_class(target_onehot);
  auto num = ops::scalar_add(ops::scalar_mul(inter, T(2)), eps);
  auto den = ops::scalar_add(ops::add(psum, tsum), eps);
  auto dice = ops::div(num, den);

  std::vector<T> w(static_cast<std::size_t>(k), T(1));
  if (!class_weights.empty())
    for (int c = 0; c < k; ++c) w[static_cast<std::size_t>(c)] = class_weights[c];
  if (exclude_background && k > 1) w[0] = T(0);
  T wsum = T(0);
  for (T v : w) wsum += v;
  if (wsum <= T(0)) fail(ErrorKind::Config, "dice_loss: all class weights are zero");
  for (T& v : w) v /= wsum;
  auto mean_dice = ops::sum(ops::mul(dice, Tensor<T>::from({k}, std::move(w))));
  return ops::rsub_scalar(mean_dice, T(1));
}

// mean over pixels of -(1-p_t)^gamma * log(p_t); optional per-pixel weights
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot, T gamma,
                     const Tensor<T>& pixel_weights = {}) {
  check_shape(probs.shape() == target_onehot.shape(), "focal_loss shape mismatch");
  auto pt = ops::sum_channels(ops::mul(probs, target_onehot));
  auto ptc = ops::clamp(pt, T(1e-7), T(1));
  auto neg_log = ops::scalar_mul(ops::log_op(ptc), T(-1));
  auto px = gamma == T(0)
                ? neg_log
                : ops::mul(ops::pow_scalar(ops::rsub_scalar(ptc, T(1)), gamma), neg_log);
  if (!pixel_weights.defined()) return ops::mean(px);
  check_shape(pixel_weights.shape() == px.shape(), "focal_loss weight map shape mismatch");
  T wsum = T(0);
  for (T v : pixel_weights.data()) wsum += v;
  return ops::scalar_mul(ops::sum(ops::mul(px, pixel_weights)), T(1) / wsum);
}

// weighted mean of -log softmax(logits)[label]; fused forward/backward
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        const std::vector<T>& per_class_weights = {}) {
  check_shape(logits.ndim() == 4, "cross_entropy logits must be N,K,H,W");
  const int n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (labels.size() != static_cast<std::size_t>(n) * h * w)
    fail(ErrorKind::Shape, "cross_entropy label count mismatch");
  check_labels<T>(labels, k);
  if (!per_class_weights.empty() && per_class_weights.size() != static_cast<std::size_t>(k))
    fail(ErrorKind::Shape, "cross_entropy per_class_weights must have K entries");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T* zp = logits.data().data();
  double loss = 0.0, wsum = 0.0;
  for (int i = 0; i < n; ++i)
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = zp[static_cast<std::size_t>(i) * k * plane + p];
      for (int c = 1; c < k; ++c)
        mx = std::max(mx, static_cast<double>(zp[(static_cast<std::size_t>(i) * k + c) * plane + p]));
      double denom = 0.0;
      for (int c = 0; c < k; ++c)
        denom += std::exp(zp[(static_cast<std::size_t>(i) * k + c) * plane + p] - mx);
      const int t = labels[i * plane + p];
      const double wv = per_class_weights.empty()
                            ? 1.0
                            : static_cast<double>(per_class_weights[static_cast<std::size_t>(t)]);
      const double log_pt =
          zp[(static_cast<std::size_t>(i) * k + t) * plane + p] - mx - std::log(denom);
      loss += wv * -log_pt;
      wsum += wv;
    }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / wsum));

  if (segmate::detail::grad_enabled(logits)) {
    out.set_requires_grad(true);
    Tensor<T> lc = logits, oc = out;
    const T inv_wsum = static_cast<T>(1.0 / wsum);
    Tape<T>::active()->record([lc, oc, labels, per_class_weights, inv_wsum]() mutable {
      const int n = lc.dim(0), k = lc.dim(1), h = lc.dim(2), w = lc.dim(3);
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      const T g = oc.grad()[0];
      const T* zp = lc.data().data();
      T* gz = lc.grad().data();
      for (int i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) {
          T mx = zp[static_cast<std::size_t>(i) * k * plane + p];
          for (int c = 1; c < k; ++c)
            mx = std::max(mx, zp[(static_cast<std::size_t>(i) * k + c) * plane + p]);
          T denom = T(0);
          for (int c = 0; c < k; ++c)
            denom += std::exp(zp[(static_cast<std::size_t>(i) * k + c) * plane + p] - mx);
          const int t = labels[i * plane + p];
          const T wv = per_class_weights.empty()
                           ? T(1)
                           : per_class_weights[static_cast<std::size_t>(t)];
          for (int c = 0; c < k; ++c) {
            const std::size_t idx = (static_cast<std::size_t>(i) * k + c) * plane + p;
            const T soft = std::exp(zp[idx] - mx) / denom;
            gz[idx] += g * wv * inv_wsum * (soft - (c == t ? T(1) : T(0)));
          }
        }
    });
  }
  return out;
}

// lambda_dice * (alpha*dice + (1-alpha)*focal) + lambda_ce * ce
template <typename T>
struct SegLossParts {
  Tensor<T> total, dice, focal, ce;
};

template <typename T>
SegLossParts<T> seg_loss(const Tensor<T>& seg_logits, const std::vector<int>& labels,
                         const LossWeights<T>& w) {
  const int n = seg_logits.dim(0), k = seg_logits.dim(1);
  const int h = seg_logits.dim(2), wd = seg_logits.dim(3);
  auto onehot = one_hot<T>(labels, n, k, h, wd);
  auto wmap = weight_map<T>(labels, n, h, wd, w.per_class_weights);
  auto probs = ops::softmax_channels(seg_logits);
  auto dice = dice_loss(probs, onehot, w.dice_eps, w.per_class_weights,
                        w.dice_exclude_background);
  auto focal = focal_loss(probs, onehot, w.focal_gamma, wmap);
  auto ce = cross_entropy(seg_logits, labels, w.per_class_weights);
  auto mix = ops::add(ops::scalar_mul(dice, w.alpha), ops::scalar_mul(focal, T(1) - w.alpha));
  auto total = ops::add(ops::scalar_mul(mix, w.lambda_dice), ops::scalar_mul(ce, w.lambda_ce));
  return {total, dice, focal, ce};
}

// Binary edge map from a label image: per-class one-hot channels are run
// through 3x3 Sobel Gx/Gy with replicate padding; a pixel is an edge when any
// class has nonzero gradient magnitude. Depends only on region boundaries.
template <typename T>
Tensor<T> sobel_edges(const std::vector<int>& labels, int h, int w, int num_classes) {
  check_labels<T>(labels, num_classes);
  if (labels.size() != static_cast<std::size_t>(h) * w)
    fail(ErrorKind::Shape, "sobel_edges label count mismatch");
  Tensor<T> out({1, h, w});
  auto od = out.data();
  std::vector<char> present(static_cast<std::size_t>(num_classes), 0);
  for (int v : labels) present[static_cast<std::size_t>(v)] = 1;
  auto at = [&](int y, int x) {  // replicate padding
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return labels[static_cast<std::size_t>(y) * w + x];
  };
  for (int k = 0; k < num_classes; ++k) {
    if (!present[static_cast<std::size_t>(k)]) continue;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int b[3][3];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) b[dy + 1][dx + 1] = at(y + dy, x + dx) == k ? 1 : 0;
        const int gx = (b[0][2] + 2 * b[1][2] + b[2][2]) - (b[0][0] + 2 * b[1][0] + b[2][0]);
        const int gy = (b[2][0] + 2 * b[2][1] + b[2][2]) - (b[0][0] + 2 * b[0][1] + b[0][2]);
        if (gx != 0 || gy != 0) od[static_cast<std::size_t>(y) * w + x] = T(1);
      }
  }
  return out;
}

// binary Dice (eps=1) of sigmoid(logits) against the edge targets
template <typename T>
Tensor<T> boundary_loss(const Tensor<T>& boundary_logits, const Tensor<T>& gt_edges) {
  check_shape(boundary_logits.shape() == gt_edges.shape(),
              "boundary_loss shape mismatch: " + shape_str(boundary_logits.shape()) + " vs " +
                  shape_str(gt_edges.shape()));
  const T eps = T(1);
  auto p = ops::sigmoid(boundary_logits);
  auto inter = ops::sum(ops::mul(p, gt_edges));
  auto num = ops::scalar_add(ops::scalar_mul(inter, T(2)), eps);
  auto den = ops::scalar_add(ops::add(ops::sum(p), ops::sum(gt_edges)), eps);
  return ops::rsub_scalar(ops::div(num, den), T(1));
}

// y_k = 1 iff class k occupies at least one pixel of the slice
template <typename T>
Tensor<T> presence_targets(const std::vector<int>& labels, int n, int h, int w,
                           int num_classes) {
  check_labels<T>(labels, num_classes);
  Tensor<T> y({n, num_classes});
  auto d = y.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (std::size_t p = 0; p < plane; ++p)
      d[static_cast<std::size_t>(i) * num_classes + labels[i * plane + p]] = T(1);
  return y;
}

// mean binary cross-entropy with logits over all N*K entries
template <typename T>
Tensor<T> presence_loss(const Tensor<T>& presence_logits, const Tensor<T>& y) {
  check_shape(presence_logits.shape() == y.shape(), "presence_loss shape mismatch");
  const std::size_t n = static_cast<std::size_t>(presence_logits.numel());
  const T* zp = presence_logits.data().data();
  const T* yp = y.data().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // stable BCE on logits clamped to +-80 (identical values, no overflow)
    const double z = std::clamp(static_cast<double>(zp[i]), -80.0, 80.0);
    loss += std::max(z, 0.0) - z * yp[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss / n));
  if (segmate::detail::grad_enabled(presence_logits)) {
    out.set_requires_grad(true);
    Tensor<T> lc = presence_logits, yc = y, oc = out;
    Tape<T>::active()->record([lc, yc, oc]() mutable {
      const std::size_t n = static_cast<std::size_t>(lc.numel());
      const T g = oc.grad()[0] / static_cast<T>(n);
      const T* zp = lc.data().data();
      const T* yp = yc.data().data();
      T* gz = lc.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-zp[i]));
        gz[i] += g * (s - yp[i]);
      }
    });
  }
  return out;
}

// ----- total objective ------------------------------------------------------

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  // per-term values for logging (task terms plus the seg sub-terms)
  T seg = T(0), bdy = T(0), prs = T(0);
  T dice = T(0), focal = T(0), ce = T(0);
};

template <typename T>
struct BatchTargets {
  std::vector<int> labels;  // N*H*W
  Tensor<T> edges;          // N,1,H,W binary (only read when boundary head on)
  Tensor<T> presence;       // N,K binary (only read when presence head on)
};

template <typename T>
BatchTargets<T> make_targets(const std::vector<int>& labels, int n, int h, int w,
                             int num_classes) {
  BatchTargets<T> t;
  t.labels = labels;
  Tensor<T> edges({n, 1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::vector<int> one(labels.begin() + i * plane, labels.begin() + (i + 1) * plane);
    auto e = sobel_edges<T>(one, h, w, num_classes);
    std::copy(e.data().begin(), e.data().end(), edges.data().begin() + i * plane);
  }
  t.edges = edges;
  t.presence = presence_targets<T>(labels, n, h, w, num_classes);
  return t;
}

template <typename T>
TotalLoss<T> total_loss(const NetOutput<Tensor<T>>& out, const BatchTargets<T>& targets,
                        const LossWeights<T>& w) {
  TotalLoss<T> r;
  auto seg = seg_loss(out.seg_logits, targets.labels, w);
  r.seg = seg.total.item();
  r.dice = seg.dice.item();
  r.focal = seg.focal.item();
  r.ce = seg.ce.item();
  Tensor<T> total = ops::scalar_mul(seg.total, w.lambda_seg);
  if (out.boundary_logits) {
    auto bdy = boundary_loss(*out.boundary_logits, targets.edges);
    r.bdy = bdy.item();
    total = ops::add(total, ops::scalar_mul(bdy, w.lambda_bdy));
  }
  if (out.presence_logits) {
    auto prs = presence_loss(*out.presence_logits, targets.presence);
    r.prs = prs.item();
    total = ops::add(total, ops::scalar_mul(prs, w.lambda_prs));
  }
  r.total = total;
  return r;
}

}  // namespace losses
}  // namespace segmate
