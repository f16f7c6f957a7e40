#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "segmate/common.hpp"
#include "segmate/rng.hpp"

namespace segmate {

// Dense N-d float tensor, N×C×H×W row-major for activations. A Tensor is a
// cheap shared handle; the payload is immutable after the producing op except
// for the grad buffer. Copying shares storage.
template <typename T>
class Tensor {
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until touched by backward
    bool requires_grad = false;
  };

 public:
  using Scalar = T;

  Tensor() : n_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape) : n_(std::make_shared<Node>()) {
    for (int d : shape)
      if (d <= 0) fail(ErrorKind::Shape, "non-positive dimension in " + shape_str(shape));
    n_->shape = std::move(shape);
    n_->data.assign(static_cast<std::size_t>(segmate::numel(n_->shape)), T(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.n_->data.begin(), t.n_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    for (int d : shape)
      if (d <= 0) fail(ErrorKind::Shape, "non-positive dimension in " + shape_str(shape));
    if (static_cast<std::int64_t>(values.size()) != segmate::numel(shape))
      fail(ErrorKind::Shape, "value count " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
    t.n_->shape = std::move(shape);
    t.n_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t(std::move(shape));
    for (auto& v : t.n_->data) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, T lo = T(0), T hi = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.n_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(n_->data.size()); }
  bool defined() const { return !n_->shape.empty(); }

  std::span<T> data() { return n_->data; }
  std::span<const T> data() const { return n_->data; }
  T item() const {
    if (numel() != 1) fail(ErrorKind::Usage, "item() on tensor of " + std::to_string(numel()) + " elements");
    return n_->data[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    n_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !n_->grad.empty(); }
  std::span<T> grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
    return n_->grad;
  }
  std::span<const T> grad() const {
    static const std::vector<T> empty;
    return n_->grad.empty() ? std::span<const T>(empty) : std::span<const T>(n_->grad);
  }
  void zero_grad() { std::fill(n_->grad.begin(), n_->grad.end(), T(0)); }

  bool same_storage(const Tensor& other) const { return n_ == other.n_; }

  bool all_finite() const {
    for (T v : n_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::shared_ptr<Node> n_;
};

// Reverse-mode tape. Ops push a backward closure while a tape is active on
// this thread; backward() replays them once, in reverse topological order
// (which is recording order by construction).
template <typename T>
class Tape {
 public:
  Tape() {
    prev_ = active_;
    active_ = this;
  }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  std::size_t size() const { return nodes_.size(); }

  void backward(Tensor<T> loss) {
    if (loss.numel() != 1)
      fail(ErrorKind::Usage, "backward() requires a scalar loss, got " + shape_str(loss.shape()));
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

template <typename T>
inline bool grad_enabled(const Tensor<T>& t) {
  return Tape<T>::active() != nullptr && t.requires_grad();
}

template <typename T, typename... Rest>
inline bool grad_enabled(const Tensor<T>& t, const Rest&... rest) {
  return grad_enabled(t) || grad_enabled(rest...);
}

}  // namespace detail

}  // namespace segmate
