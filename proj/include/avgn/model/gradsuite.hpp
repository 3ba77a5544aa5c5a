#pragma once

#include <string>
#include <vector>

#include "avgn/model/config.hpp"

namespace avgn {

struct GradSuiteResult {
  std::string module;
  double tol = 0.0;
  std::size_t seeds = 0, passed = 0;
  double worst = 0.0;       // largest relative error over all seeds
  std::size_t worst_seed = 0;
  std::string worst_input;
  std::size_t retried = 0;  // elements that passed only at the finer step
  double seconds = 0.0;
  bool ok() const { return seeds > 0 && passed == seeds; }
};

// matmul, softmax, layer_norm, attention, bilinear_frame, bilinear_center,
// aespa, psi, L_p, L_V, L_A, L_s, L_mask, L_ord
const std::vector<std::string>& gradcheck_modules();

// Default tolerance per module (1e-6 for the center gradients, 1e-4 elsewhere).
double gradcheck_default_tol(const std::string& module);

// Small geometry under which whole-model loss checks stay cheap.
ModelConfig gradcheck_model_config();

// tol <= 0 picks the module default.
GradSuiteResult run_gradcheck(const std::string& module, std::size_t seeds, double tol = 0.0);

}  // namespace avgn
