#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avgn/numeric/tensor.hpp"

namespace avgn {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-6;
  // Denominator floor for the relative error, so near-zero gradients are
  // compared on an absolute scale.
  double floor = 1e-4;
  // Elements compared per input; 0 = all. Larger inputs are subsampled
  // deterministically with a fixed stride.
  std::size_t max_elements = 0;
  // Re-measure a failing element once at step/10. A kink within the original
  // step (ReLU, running max, bilinear grid line) passes at the finer step; a
  // wrong gradient fails both.
  bool retry_finer = false;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t retried = 0;  // elements accepted only at the finer step
};

struct GradCheckReport {
  std::vector<GradCheckEntry> inputs;
  double worst = 0.0;
  bool passed = false;
};

// Compares tape gradients of the scalar f against central differences for
// every input. f must rebuild its graph from the current input values on each
// call; it runs under a fresh tape each time.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {},
                           const std::vector<std::string>& names = {});

}  // namespace avgn
