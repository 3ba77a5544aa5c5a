#include "avgn/model/patchex.hpp"

#include <cmath>

#include "avgn/numeric/errors.hpp"

namespace avgn {

std::vector<std::array<double, 2>> pixel_coords(const PatchCenter& c, std::size_t P) {
  std::vector<std::array<double, 2>> out(P * P);
  const double half = static_cast<double>(P) / 2.0;
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < P; ++j) {
      // continuous position c - P/2 + j + 0.5, shifted by -0.5 into index space
      out[i * P + j] = {c.x - half + static_cast<double>(j), c.y - half + static_cast<double>(i)};
    }
  }
  return out;
}

namespace {

struct Corner {
  std::size_t x0, y0;
  double fx, fy;
};

// Floor split with the far edge folded back so x0 + 1 stays in range.
Corner split(double x, double y, std::size_t W, std::size_t H) {
  if (!(x >= 0.0 && y >= 0.0 && x <= static_cast<double>(W - 1) && y <= static_cast<double>(H - 1))) {
    throw InvariantViolation("bilinear sample outside the frame at (" + std::to_string(x) + ", " +
                             std::to_string(y) + ")");
  }
  Corner c;
  double fxl = std::floor(x), fyl = std::floor(y);
  if (fxl >= static_cast<double>(W - 1)) fxl = static_cast<double>(W - 2);
  if (fyl >= static_cast<double>(H - 1)) fyl = static_cast<double>(H - 2);
  c.x0 = static_cast<std::size_t>(fxl);
  c.y0 = static_cast<std::size_t>(fyl);
  c.fx = x - fxl;
  c.fy = y - fyl;
  return c;
}

}  // namespace

NdArray bilinear_sample(const NdArray& frame, const std::vector<std::array<double, 2>>& coords,
                        std::size_t P) {
  if (frame.rank() != 3) throw DimensionError("bilinear_sample: frame must be [Ch x H x W]");
  if (coords.size() != P * P) throw DimensionError("bilinear_sample: coordinate count");
  const std::size_t ch = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  if (H < 2 || W < 2) throw DimensionError("bilinear_sample: frame too small");
  NdArray out({ch, P, P});
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const Corner k = split(coords[n][0], coords[n][1], W, H);
    // m00 at (x0, y0), m01 at (x0+1, y0), m10 at (x0, y0+1), m11 at (x0+1, y0+1)
    const double w00 = (1.0 - k.fx) * (1.0 - k.fy), w01 = k.fx * (1.0 - k.fy);
    const double w10 = (1.0 - k.fx) * k.fy, w11 = k.fx * k.fy;
    for (std::size_t c = 0; c < ch; ++c) {
      const double m00 = frame.at(c, k.y0, k.x0), m01 = frame.at(c, k.y0, k.x0 + 1);
      const double m10 = frame.at(c, k.y0 + 1, k.x0), m11 = frame.at(c, k.y0 + 1, k.x0 + 1);
      out[c * P * P + n] = m00 * w00 + m01 * w01 + m10 * w10 + m11 * w11;
    }
  }
  return out;
}

BilinearGrads bilinear_backward(const NdArray& dpatch, const std::vector<std::array<double, 2>>& coords,
                                const NdArray& frame, bool want_frame) {
  const std::size_t ch = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const std::size_t pp = coords.size();
  if (dpatch.size() != ch * pp) throw DimensionError("bilinear_backward: gradient shape");
  BilinearGrads g;
  if (want_frame) g.dframe = NdArray(frame.shape(), 0.0);
  for (std::size_t n = 0; n < pp; ++n) {
    const Corner k = split(coords[n][0], coords[n][1], W, H);
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = dpatch[c * pp + n];
      const double m00 = frame.at(c, k.y0, k.x0), m01 = frame.at(c, k.y0, k.x0 + 1);
      const double m10 = frame.at(c, k.y0 + 1, k.x0), m11 = frame.at(c, k.y0 + 1, k.x0 + 1);
      // d m~ / d x_ij equals d m~ / d x_c since the offset is constant
      g.dx += d * ((m01 - m00) * (1.0 - k.fy) + (m11 - m10) * k.fy);
      g.dy += d * ((m10 - m00) * (1.0 - k.fx) + (m11 - m01) * k.fx);
      if (want_frame) {
        g.dframe.at(c, k.y0, k.x0) += d * (1.0 - k.fx) * (1.0 - k.fy);
        g.dframe.at(c, k.y0, k.x0 + 1) += d * k.fx * (1.0 - k.fy);
        g.dframe.at(c, k.y0 + 1, k.x0) += d * (1.0 - k.fx) * k.fy;
        g.dframe.at(c, k.y0 + 1, k.x0 + 1) += d * k.fx * k.fy;
      }
    }
  }
  return g;
}

PatchCenter PatchPolicy::to_pixels(const NdArray& center_norm, std::size_t W, std::size_t H) {
  return {center_norm[0] * static_cast<double>(W), center_norm[1] * static_cast<double>(H)};
}

Tensor crop_patch(const Tensor& frame, const Tensor& center_norm, std::size_t P) {
  if (frame.shape().size() != 3) throw DimensionError("crop_patch: frame must be [Ch x H x W]");
  if (center_norm.shape() != Shape{2}) throw DimensionError("crop_patch: center must be [2]");
  const std::size_t H = frame.dim(1), W = frame.dim(2);
  const PatchCenter c = PatchPolicy::to_pixels(center_norm.value(), W, H);
  auto coords = pixel_coords(c, P);
  NdArray patch = bilinear_sample(frame.value(), coords, P);
  const bool track = Tape::active() && (frame.requires_grad() || center_norm.requires_grad());
  Tensor out(std::move(patch), track);
  if (track) {
    Tape::active()->record([out, frame, center_norm, coords = std::move(coords), W, H]() {
      if (!out.has_grad()) return;
      BilinearGrads g = bilinear_backward(out.node()->grad, coords, frame.value(), frame.requires_grad());
      if (center_norm.requires_grad()) {
        center_norm.accumulate_grad(
            NdArray::vector({g.dx * static_cast<double>(W), g.dy * static_cast<double>(H)}));
      }
      if (frame.requires_grad()) frame.accumulate_grad(g.dframe);
    });
  }
  return out;
}

PatchPolicy::PatchPolicy(nn::ParamStore& store, const ModelConfig& cfg, std::size_t in_channels,
                         std::size_t h, std::size_t w, Rng& rng)
    : tokens_(h * w) {
  const std::string g = "pi";
  reduce = nn::Linear(store, "pi.reduce", g, in_channels, cfg.pi_reduce, rng);
  cell_ = nn::GruCell(store, "pi.gru", g, h * w * cfg.pi_reduce, cfg.pi_hidden, rng);
  head1 = nn::Linear(store, "pi.head1", g, cfg.pi_hidden, cfg.pi_head, rng);
  head2 = nn::Linear(store, "pi.head2", g, cfg.pi_head, 2, rng);
  // u in (0,1) maps onto [P/2, W - P/2], then normalizes by W
  const double W = static_cast<double>(cfg.frame_w), H = static_cast<double>(cfg.frame_h);
  const double P = static_cast<double>(cfg.P);
  span_ = NdArray::vector({(W - P) / W, (H - P) / H});
  offset_ = NdArray::vector({P / (2.0 * W), P / (2.0 * H)});
}

std::pair<Tensor, Tensor> PatchPolicy::step(const Tensor& feature_map, const Tensor& state) const {
  // Per-position channel reduction keeps the spatial layout for the cell.
  Tensor tokens = relu(reduce(map_to_tokens(feature_map)));
  if (tokens.dim(0) != tokens_) throw DimensionError("patch policy: unexpected map size");
  Tensor flat = reshape(tokens, {tokens.size()});
  Tensor h = cell_(flat, state);
  Tensor u = sigmoid(head2(relu(head1(h))));
  Tensor center = add(mul(u, Tensor(span_)), Tensor(offset_));
  return {center, h};
}

std::uint64_t PatchPolicy::macs() const {
  return reduce.macs(tokens_) + cell_.macs() + head1.macs(1) + head2.macs(1);
}

}  // namespace avgn
