#pragma once

#include <map>
#include <string>
#include <vector>

#include "avgn/nn/params.hpp"

namespace avgn::nn {

// Cosine annealing across the whole run: base at step 0, zero at the last step.
double cosine_lr(double base, std::size_t step, std::size_t total_steps);

// SGD with heavy-ball momentum and L2 weight decay, one base rate per group.
class Sgd {
 public:
  Sgd(ParamStore& store, std::map<std::string, double> group_lr, double momentum,
      double weight_decay, std::size_t total_steps);

  // Applies the accumulated gradients (scaled by grad_scale) and advances the schedule.
  void step(double grad_scale = 1.0);
  double lr(const std::string& group) const;
  std::size_t steps_taken() const { return step_; }

 private:
  ParamStore& store_;
  std::map<std::string, double> group_lr_;
  double momentum_, weight_decay_;
  std::size_t total_steps_;
  std::size_t step_ = 0;
  std::vector<NdArray> velocity_;
};

}  // namespace avgn::nn
