#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "avgn/numeric/ndarray.hpp"

namespace avgn {

struct TensorNode {
  NdArray value;
  NdArray grad;  // empty until something accumulates into it
  bool requires_grad = false;
};

// Shared handle to a value plus its gradient accumulator. Copies alias the same
// node, so a parameter captured by several ops accumulates one gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NdArray value, bool requires_grad = false);

  static Tensor parameter(NdArray value) { return Tensor(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const NdArray& value() const { return node_->value; }
  // Direct write access for optimizers and checkpoint loading; never used
  // while a tape holds closures over this node.
  NdArray& mutable_value() { return node_->value; }

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  // Gradient, or zeros of the value's shape if nothing accumulated yet.
  NdArray grad() const;
  void zero_grad();
  // Gradient writes go through the shared node, so they are const on the handle.
  void accumulate_grad(const NdArray& delta) const;
  NdArray& grad_buffer() const;

  // Same value, cut from the tape.
  Tensor detach() const;

  TensorNode* node() const { return node_.get(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Linear record of executed differentiable ops. backward() replays the
// recorded closures in exact reverse order, once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn);

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(const Tensor& root);
  void backward(const Tensor& root, const NdArray& seed);

  void reset();
  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  // The tape that ops record onto on the current thread, or nullptr.
  static Tape* active();

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// Multiply-accumulate counter for matmul-class work executed in forward ops.
class MacCounter {
 public:
  std::uint64_t total() const { return total_; }
  void add(std::uint64_t macs) { total_ += macs; }
  void reset() { total_ = 0; }

  static MacCounter* active();

  class Scope {
   public:
    explicit Scope(MacCounter& counter);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    MacCounter* previous_;
  };

 private:
  std::uint64_t total_ = 0;
};

void count_macs(std::uint64_t macs);

}  // namespace avgn
