#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlnet/error.hpp"

namespace mlnet {

// Extents of a rank-4 tensor: batch x channels x height x width.
struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t count() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
};
}  // namespace detail

// Dense rank-4 tensor of 64-bit floats in row-major (n,c,h,w) order, with an
// optional gradient buffer of identical shape. Copies are shallow handles to
// the same storage; operations treat produced tensors as immutable except for
// gradient accumulation during backward().
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape s, bool requires_grad = false)
      : d_(std::make_shared<detail::TensorData>()) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("negative tensor extent " + s.str());
    }
    d_->shape = s;
    d_->values.assign(static_cast<std::size_t>(s.count()), 0.0);
    d_->requires_grad = requires_grad;
  }

  static Tensor full(Shape s, double v, bool requires_grad = false) {
    Tensor t(s, requires_grad);
    for (auto& x : t.d_->values) x = v;
    return t;
  }

  static Tensor from(Shape s, std::vector<double> vals,
                     bool requires_grad = false) {
    Tensor t(s, requires_grad);
    if (static_cast<std::int64_t>(vals.size()) != s.count()) {
      throw ShapeError("value count " + std::to_string(vals.size()) +
                       " does not match shape " + s.str());
    }
    t.d_->values = std::move(vals);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return full({1, 1, 1, 1}, v, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::int64_t size() const { return d_->shape.count(); }

  std::span<const double> values() const { return d_->values; }
  std::span<double> values_mut() { return d_->values; }

  double operator()(std::int64_t n, std::int64_t c, std::int64_t h,
                    std::int64_t w) const {
    return d_->values[static_cast<std::size_t>(index(n, c, h, w))];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return d_->values[static_cast<std::size_t>(index(n, c, h, w))];
  }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    const Shape& s = d_->shape;
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }

  // Value of a single-element tensor.
  double item() const {
    if (size() != 1) {
      throw ShapeError("item() on non-scalar tensor " + shape().str());
    }
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }

  std::span<const double> grad() const {
    if (d_->grad.empty()) {
      throw Error("gradient not populated for tensor " + shape().str());
    }
    return d_->grad;
  }

  // Gradient buffer, zero-initialized on first use.
  std::span<double> grad_mut() {
    if (d_->grad.empty() && size() > 0) {
      d_->grad.assign(static_cast<std::size_t>(size()), 0.0);
    }
    return d_->grad;
  }

  void ensure_zero_grad() {
    if (d_->grad.empty()) {
      d_->grad.assign(static_cast<std::size_t>(size()), 0.0);
    }
  }

  void drop_grad() { d_->grad.clear(); }

  // Deep copy of the values; gradient state is not copied.
  Tensor clone() const {
    Tensor t(shape(), requires_grad());
    t.d_->values = d_->values;
    return t;
  }

  // Storage identity, for telling whether two handles alias the same node.
  const void* node() const { return d_.get(); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Record of the operations applied while building a value, in execution
// (hence topological) order. backward() replays the records once, in reverse,
// accumulating dOutput/dTensor into every recorded tensor that requires a
// gradient. One tape and its tensors belong to a single logical thread;
// distinct tapes are independent.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> tensors, BackwardFn fn) {
    nodes_.push_back(Node{std::move(tensors), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  friend void backward(Tape& tape, Tensor& output);

 private:
  struct Node {
    std::vector<Tensor> tensors;  // inputs and output of one op
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

// Seeds d(output)/d(output) = 1 and replays the tape in reverse. Every
// grad-requiring tensor that appears on the tape ends up with a gradient
// buffer; tensors not contributing to `output` keep zeros.
inline void backward(Tape& tape, Tensor& output) {
  if (output.size() != 1) {
    throw ShapeError("backward requires a scalar output, got " +
                     output.shape().str());
  }
  for (auto& node : tape.nodes_) {
    for (auto& t : node.tensors) {
      if (t.requires_grad()) t.ensure_zero_grad();
    }
  }
  output.ensure_zero_grad();
  output.grad_mut()[0] += 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    if (it->fn) it->fn();
  }
}

}  // namespace mlnet
