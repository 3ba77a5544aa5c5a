#pragma once

#include <cmath>

#include "avgn/numeric/errors.hpp"
#include "avgn/numeric/gradcheck.hpp"
#include "avgn/numeric/ops.hpp"
#include "avgn/numeric/rng.hpp"

namespace testutil {

inline avgn::Tensor param(avgn::Rng& rng, const avgn::Shape& shape, double scale = 1.0) {
  return avgn::Tensor::parameter(rng.normal_array(shape, scale));
}

// Fixed random projection to a scalar, so every output element contributes
// a distinct weight to the checked gradient.
inline avgn::Tensor probe(const avgn::Tensor& y, std::uint64_t seed) {
  avgn::Rng rng(seed ^ 0xABCDEFULL);
  avgn::Tensor w(rng.normal_array(y.shape(), 1.0));
  return avgn::sum(avgn::mul(y, w));
}

}  // namespace testutil
