#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "avgn/model/config.hpp"
#include "avgn/nn/layers.hpp"

namespace avgn {

// Continuous patch center in pixels; the frame spans [0, W] x [0, H] with
// pixel (i, j) centered at (j + 0.5, i + 0.5).
struct PatchCenter {
  double x = 0.0;
  double y = 0.0;
};

// Sample positions in array-index space (pixel centers at integers):
// x_c - P/2 + j for j = 0..P-1, i.e. integer offsets {-P/2, ..., P/2-1}
// plus a half-pixel shift. Returned row-major, entry i*P+j = (x, y).
std::vector<std::array<double, 2>> pixel_coords(const PatchCenter& c, std::size_t P);

// Bilinear read of frame [Ch x H x W] at index-space coordinates. Throws
// InvariantViolation for any coordinate outside [0, W-1] x [0, H-1].
NdArray bilinear_sample(const NdArray& frame, const std::vector<std::array<double, 2>>& coords,
                        std::size_t P);

struct BilinearGrads {
  double dx = 0.0;
  double dy = 0.0;
  NdArray dframe;  // empty unless requested
};

// Gradients of a scalar loss wrt the patch center (pixels) and frame, given
// dL/dpatch [Ch x P x P]. Every sample shares the center's derivative.
BilinearGrads bilinear_backward(const NdArray& dpatch, const std::vector<std::array<double, 2>>& coords,
                                const NdArray& frame, bool want_frame);

// Differentiable crop. center_norm [2] holds (x, y) normalized by (W, H);
// conversion to pixels happens here.
Tensor crop_patch(const Tensor& frame, const Tensor& center_norm, std::size_t P);

// Recurrent patch extraction network.
class PatchPolicy {
 public:
  PatchPolicy() = default;
  // in_channels x h x w is the shape of the map it consumes.
  PatchPolicy(nn::ParamStore& store, const ModelConfig& cfg, std::size_t in_channels,
              std::size_t h, std::size_t w, Rng& rng);

  Tensor initial_state() const { return cell_.initial_state(); }
  // Returns the normalized center [2] and the next hidden state.
  std::pair<Tensor, Tensor> step(const Tensor& feature_map, const Tensor& state) const;

  std::uint64_t macs() const;
  static PatchCenter to_pixels(const NdArray& center_norm, std::size_t W, std::size_t H);

  nn::Linear reduce, head1, head2;

 private:
  nn::GruCell cell_;
  std::size_t tokens_ = 0;
  NdArray span_, offset_;
};

}  // namespace avgn
