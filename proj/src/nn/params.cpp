#include "avgn/nn/params.hpp"

#include "avgn/numeric/errors.hpp"

namespace avgn::nn {

Tensor ParamStore::create(const std::string& name, const std::string& group, NdArray init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError("duplicate parameter name " + name);
  }
  Tensor t = Tensor::parameter(std::move(init));
  entries_.push_back({name, group, t});
  return t;
}

const ParamEntry& ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw ArgumentError("no parameter named " + name);
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::size_t ParamStore::count(const std::string& group) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.group == group) n += e.tensor.size();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

double ParamStore::grad_sq_norm(const std::string& group) const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (!group.empty() && e.group != group) continue;
    if (!e.tensor.has_grad()) continue;
    const NdArray g = e.tensor.grad();
    for (double v : g.data()) s += v * v;
  }
  return s;
}

Checkpoint ParamStore::to_checkpoint() const {
  Checkpoint c;
  for (const auto& e : entries_) c.params.emplace(e.name, e.tensor.value());
  return c;
}

void ParamStore::load(const Checkpoint& ckpt) {
  if (ckpt.params.size() != entries_.size()) {
    throw ArgumentError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                        " tensors, model has " + std::to_string(entries_.size()));
  }
  for (auto& e : entries_) {
    auto it = ckpt.params.find(e.name);
    if (it == ckpt.params.end()) throw ArgumentError("checkpoint lacks " + e.name);
    if (it->second.shape() != e.tensor.shape()) {
      throw DimensionError("checkpoint shape mismatch for " + e.name);
    }
    e.tensor.mutable_value() = it->second;
  }
}

}  // namespace avgn::nn
