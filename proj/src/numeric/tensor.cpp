#include "avgn/numeric/tensor.hpp"

#include <stdexcept>

#include "avgn/numeric/errors.hpp"

namespace avgn {

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local MacCounter* g_active_counter = nullptr;
}  // namespace

Tensor::Tensor(NdArray value, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

NdArray Tensor::grad() const {
  if (!has_grad()) return NdArray(shape(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad = NdArray();
}

NdArray& Tensor::grad_buffer() const {
  if (node_->grad.empty()) node_->grad = NdArray(shape(), 0.0);
  return node_->grad;
}

void Tensor::accumulate_grad(const NdArray& delta) const {
  if (delta.size() != size()) {
    throw DimensionError("gradient " + shape_str(delta.shape()) + " for value " +
                         shape_str(shape()));
  }
  grad_buffer() += delta;
}

Tensor Tensor::detach() const { return Tensor(node_->value, false); }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw std::logic_error("recording onto a tape that already ran backward");
  ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) {
    throw DimensionError("backward root must be scalar, got " + shape_str(root.shape()));
  }
  backward(root, NdArray(root.shape(), 1.0));
}

void Tape::backward(const Tensor& root, const NdArray& seed) {
  if (consumed_) throw std::logic_error("backward called twice without reset");
  consumed_ = true;
  if (!root.requires_grad()) return;
  Tensor handle = root;
  handle.accumulate_grad(seed);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::reset() {
  ops_.clear();
  consumed_ = false;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

MacCounter* MacCounter::active() { return g_active_counter; }

MacCounter::Scope::Scope(MacCounter& counter) : previous_(g_active_counter) {
  g_active_counter = &counter;
}
MacCounter::Scope::~Scope() { g_active_counter = previous_; }

void count_macs(std::uint64_t macs) {
  if (g_active_counter) g_active_counter->add(macs);
}

}  // namespace avgn
