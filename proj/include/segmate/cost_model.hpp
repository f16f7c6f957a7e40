#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "segmate/model.hpp"

namespace segmate {

struct LayerCost {
  std::string name;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;        // trainable elements introduced by this layer
  std::uint64_t output_bytes = 0;  // activation bytes produced (4 bytes/element)
};

// Analytical accounting over one forward pass. Conventions match the
// instrumented kernels exactly: MAC = 2 FLOPs, conv/linear count padured taps
// and bias, normalization and FiLM affine are 2/element, activations and
// elementwise/pooling visits 1/element, bilinear resampling 8/output,
// nearest/concat/broadcast free. Activations are 4 bytes per element; the
// peak adds parameter and BN-buffer bytes to the live activation set.
struct CostReport {
  std::vector<LayerCost> layers;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;
  std::uint64_t buffer_params = 0;  // BN running stats
  std::uint64_t peak_activation_bytes = 0;  // live activations + parameter bytes
  int batch = 1;
  double gflops_per_slice = 0.0;

  std::uint64_t param_bytes() const { return (total_params + buffer_params) * 4; }

  void write_kv(std::ostream& os) const {
    os << "# flops convention: MAC=2, bias and padded taps counted, norm/affine=2 per element,\n"
       << "# activations/elementwise/pooling=1 per element, bilinear=8 per output, "
          "nearest/concat free\n"
       << "# memory convention: 4 bytes/element; peak = live activations + parameter bytes\n";
    os << "total_flops=" << total_flops << "\n";
    os << "total_params=" << total_params << "\n";
    os << "buffer_params=" << buffer_params << "\n";
    os << "param_bytes=" << param_bytes() << "\n";
    os << "peak_activation_bytes=" << peak_activation_bytes << "\n";
    os << "batch=" << batch << "\n";
    os << std::setprecision(10) << "gflops_per_slice=" << gflops_per_slice << "\n";
  }
};

// gflops_per_slice * n_slices, the per-volume accounting used in the tables
inline double gflops_per_volume(double gflops_per_slice, int n_slices) {
  if (n_slices < 1) fail(ErrorKind::Usage, "n_slices must be >= 1");
  return gflops_per_slice * n_slices;
}

// Shape-only interpreter. Implements the same interface as Exec<T>; every
// call appends a layer entry and updates value liveness for the memory peak.
template <typename T>
class CostCtx {
 public:
  using Scalar = T;

  struct Value {
    Shape shape;
    int id = -1;
  };

  Value make_input(Shape s) {
    Value v{std::move(s), next_id_++};
    produced_.push_back(-1);  // live before the first op
    last_use_.push_back(-1);
    bytes_.push_back(static_cast<std::uint64_t>(segmate::numel(v.shape)) * 4);
    return v;
  }

  // ---- interpreter interface ----

  Value conv2d(const std::string& name, const Value& x, Conv2dParams<T>& p) {
    const int Cout = p.w.dim(0), Cin = p.w.dim(1), kh = p.w.dim(2), kw = p.w.dim(3);
    check_shape(x.shape.size() == 4 && x.shape[1] == Cin,
                "cost conv2d channel mismatch at " + name);
    const int N = x.shape[0];
    const int OH = out_dim(x.shape[2], kh, p.stride, p.padding, p.dilation);
    const int OW = out_dim(x.shape[3], kw, p.stride, p.padding, p.dilation);
    check_shape(OH >= 1 && OW >= 1, "cost conv2d empty output at " + name);
    const std::uint64_t positions = u64(N) * Cout * OH * OW;
    const std::uint64_t flops = positions * (2ull * Cin * kh * kw) + positions;
    return emit(name, flops, trainable_params(p.w, p.b), {x}, {N, Cout, OH, OW});
  }

  Value batch_norm(const std::string& name, const Value& x, BnParams<T>& p, bool) {
    const std::uint64_t n = u64(segmate::numel(x.shape));
    const std::uint64_t tp = trainable_params(p.gamma, p.beta);
    track_buffers(p.running_mean, p.running_var);
    return emit(name, 2 * n, tp, {x}, x.shape);
  }

  Value linear(const std::string& name, const Value& x, LinearParams<T>& p) {
    const int Fout = p.w.dim(0), Fin = p.w.dim(1);
    check_shape(x.shape.size() == 2 && x.shape[1] == Fin,
                "cost linear dimension mismatch at " + name);
    const std::uint64_t rows = u64(x.shape[0]);
    const std::uint64_t flops = rows * (2ull * Fin * Fout + u64(Fout));
    return emit(name, flops, trainable_params(p.w, p.b), {x}, {x.shape[0], Fout});
  }

  Value silu(const Value& x) { return emit("silu", u64(segmate::numel(x.shape)), 0, {x}, x.shape); }
  Value relu(const Value& x) { return emit("relu", u64(segmate::numel(x.shape)), 0, {x}, x.shape); }
  Value sigmoid(const Value& x) {
    return emit("sigmoid", u64(segmate::numel(x.shape)), 0, {x}, x.shape);
  }
  Value add(const Value& a, const Value& b) {
    check_shape(a.shape == b.shape, "cost add shape mismatch");
    return emit("add", u64(segmate::numel(a.shape)), 0, {a, b}, a.shape);
  }
  Value scalar_mul(const Value& x, T) {
    return emit("scalar_mul", u64(segmate::numel(x.shape)), 0, {x}, x.shape);
  }
  Value scalar_add(const Value& x, T) {
    return emit("scalar_add", u64(segmate::numel(x.shape)), 0, {x}, x.shape);
  }
  Value global_avg_pool(const Value& x) {
    return emit("gap", u64(segmate::numel(x.shape)), 0, {x}, {x.shape[0], x.shape[1]});
  }
  Value global_max_pool(const Value& x) {
    return emit("gmp", u64(segmate::numel(x.shape)), 0, {x}, {x.shape[0], x.shape[1]});
  }
  Value channel_mean(const Value& x) {
    return emit("channel_mean", u64(segmate::numel(x.shape)), 0, {x},
                {x.shape[0], 1, x.shape[2], x.shape[3]});
  }
  Value channel_max(const Value& x) {
    return emit("channel_max", u64(segmate::numel(x.shape)), 0, {x},
                {x.shape[0], 1, x.shape[2], x.shape[3]});
  }
  Value upsample_bilinear(const Value& x, int f) {
    Shape out{x.shape[0], x.shape[1], x.shape[2] * f, x.shape[3] * f};
    return emit("upsample_bilinear", 8ull * u64(segmate::numel(out)), 0, {x}, out);
  }
  Value concat(const std::vector<Value>& vs, int axis) {
    Shape out = vs.at(0).shape;
    for (std::size_t i = 1; i < vs.size(); ++i) out[axis] += vs[i].shape[axis];
    return emit("concat", 0, 0, vs, out);
  }
  Value scale_channels(const Value& x, const Value& s) {
    return emit("scale_channels", u64(segmate::numel(x.shape)), 0, {x, s}, x.shape);
  }
  Value scale_spatial(const Value& x, const Value& m) {
    return emit("scale_spatial", u64(segmate::numel(x.shape)), 0, {x, m}, x.shape);
  }
  Value channel_affine(const Value& x, const Value& g, const Value& b) {
    return emit("channel_affine", 2ull * u64(segmate::numel(x.shape)), 0, {x, g, b}, x.shape);
  }
  Value broadcast_spatial(const Value& v, int h, int w) {
    return emit("broadcast_spatial", 0, 0, {v}, {v.shape[0], v.shape[1], h, w});
  }
  int channels(const Value& x) const { return x.shape[1]; }
  int height(const Value& x) const { return x.shape[2]; }
  int width(const Value& x) const { return x.shape[3]; }

  // ---- report assembly ----

  void mark_output(const Value& v) { last_use_[static_cast<std::size_t>(v.id)] = INT32_MAX; }

  CostReport report(int batch) const {
    CostReport r;
    r.layers = layers_;
    r.batch = batch;
    for (const auto& l : layers_) {
      r.total_flops += l.flops;
      r.total_params += l.params;
    }
    r.buffer_params = buffer_params_;
    r.peak_activation_bytes = peak_live_bytes() + (r.total_params + r.buffer_params) * 4;
    r.gflops_per_slice = static_cast<double>(r.total_flops) / batch / 1e9;
    return r;
  }

  std::uint64_t peak_live_bytes() const {
    const int steps = static_cast<int>(layers_.size());
    std::uint64_t peak = 0;
    for (int s = 0; s < steps; ++s) {
      std::uint64_t live = 0;
      for (std::size_t v = 0; v < bytes_.size(); ++v)
        if (produced_[v] <= s && last_use_[v] >= s) live += bytes_[v];
      peak = std::max(peak, live);
    }
    return peak;
  }

 private:
  static std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

  static int out_dim(int in, int k, int stride, int pad, int dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  }

  template <typename... Ts>
  std::uint64_t trainable_params(const Ts&... ts) {
    std::uint64_t n = 0;
    auto count_once = [&](const Tensor<T>& t) {
      const void* key = t.data().data();
      if (seen_params_.insert(key).second) n += u64(t.numel());
    };
    (count_once(ts), ...);
    return n;
  }

  void track_buffers(const Tensor<T>& a, const Tensor<T>& b) {
    for (const Tensor<T>* t : {&a, &b}) {
      const void* key = t->data().data();
      if (seen_params_.insert(key).second) buffer_params_ += u64(t->numel());
    }
  }

  Value emit(const std::string& name, std::uint64_t flops, std::uint64_t params,
             const std::vector<Value>& inputs, Shape out_shape) {
    const int step = static_cast<int>(layers_.size());
    for (const auto& in : inputs) last_use_[static_cast<std::size_t>(in.id)] = step;
    Value out{std::move(out_shape), next_id_++};
    produced_.push_back(step);
    last_use_.push_back(step);
    bytes_.push_back(u64(segmate::numel(out.shape)) * 4);
    layers_.push_back({name, flops, params, bytes_.back()});
    return out;
  }

  std::vector<LayerCost> layers_;
  std::vector<int> produced_, last_use_;
  std::vector<std::uint64_t> bytes_;
  std::set<const void*> seen_params_;
  std::uint64_t buffer_params_ = 0;
  int next_id_ = 0;
};

// Analytical FLOPs/params/memory for one forward pass at the given batch.
template <typename T>
CostReport count_flops(Network<T>& net, int batch = 1) {
  const auto& cfg = net.config();
  CostCtx<T> cx;
  auto stack = cx.make_input({batch, 3, cfg.input_h, cfg.input_w});
  auto z = cx.make_input({batch, 1});
  auto out = net.run(cx, stack, z);
  cx.mark_output(out.seg_logits);
  if (out.boundary_logits) cx.mark_output(*out.boundary_logits);
  if (out.presence_logits) cx.mark_output(*out.presence_logits);
  return cx.report(batch);
}

template <typename T>
std::uint64_t peak_activation_bytes(Network<T>& net, int batch) {
  return count_flops(net, batch).peak_activation_bytes;
}

}  // namespace segmate
