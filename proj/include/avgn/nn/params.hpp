#pragma once

#include <string>
#include <vector>

#include "avgn/numeric/checkpoint.hpp"
#include "avgn/numeric/tensor.hpp"

namespace avgn::nn {

struct ParamEntry {
  std::string name;
  std::string group;  // optimizer group, e.g. "f_G" or "pi"
  Tensor tensor;
};

// Flat registry of trainable tensors in creation order. Layers register into
// it at construction; optimizers and checkpoints walk it.
class ParamStore {
 public:
  Tensor create(const std::string& name, const std::string& group, NdArray init);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  const ParamEntry& find(const std::string& name) const;
  std::size_t count() const;  // scalar parameter count
  std::size_t count(const std::string& group) const;

  void zero_grad();
  // Sum of squared gradient entries over a group ("" = all).
  double grad_sq_norm(const std::string& group = "") const;

  Checkpoint to_checkpoint() const;
  // Shapes and names must match exactly.
  void load(const Checkpoint& ckpt);

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace avgn::nn
