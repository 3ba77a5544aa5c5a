#include "avgn/nn/optim.hpp"

#include <cmath>
#include <numbers>

#include "avgn/numeric/errors.hpp"

namespace avgn::nn {

double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * frac));
}

Sgd::Sgd(ParamStore& store, std::map<std::string, double> group_lr, double momentum,
         double weight_decay, std::size_t total_steps)
    : store_(store),
      group_lr_(std::move(group_lr)),
      momentum_(momentum),
      weight_decay_(weight_decay),
      total_steps_(total_steps) {
  for (const auto& e : store_.entries()) {
    if (!group_lr_.count(e.group)) throw ConfigError("no learning rate for group " + e.group);
    velocity_.emplace_back(e.tensor.shape(), 0.0);
  }
}

double Sgd::lr(const std::string& group) const {
  return cosine_lr(group_lr_.at(group), step_, total_steps_);
}

void Sgd::step(double grad_scale) {
  auto& entries = store_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    const double rate = lr(e.group);
    NdArray& w = e.tensor.mutable_value();
    NdArray& vel = velocity_[i];
    const bool has = e.tensor.has_grad();
    const NdArray* g = has ? &e.tensor.grad_buffer() : nullptr;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double grad = (has ? grad_scale * (*g)[j] : 0.0) + weight_decay_ * w[j];
      vel[j] = momentum_ * vel[j] + grad;
      w[j] -= rate * vel[j];
    }
  }
  ++step_;
}

}  // namespace avgn::nn
