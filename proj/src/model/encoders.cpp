#include "avgn/model/encoders.hpp"

#include "avgn/numeric/errors.hpp"

namespace avgn {

void FlopsLedger::merge(const FlopsLedger& other) {
  for (const auto& [k, v] : other.stages_) stages_[k] += v;
}

std::uint64_t FlopsLedger::macs(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it == stages_.end() ? 0 : it->second;
}

std::uint64_t FlopsLedger::total_macs() const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : stages_) t += v;
  return t;
}

EncoderConfig EncoderConfig::from_spec(const ConvSpec& spec, std::size_t in_channels,
                                       std::size_t h, std::size_t w, bool global_pool) {
  EncoderConfig c;
  c.in_channels = in_channels;
  c.in_h = h;
  c.in_w = w;
  c.global_pool = global_pool;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    c.stages.push_back({spec.channels[i], spec.strides[i], spec.kernel, spec.kernel / 2});
  }
  return c;
}

Shape EncoderConfig::output_shape() const {
  std::size_t ch = in_channels, h = in_h, w = in_w;
  for (const auto& s : stages) {
    if (h + 2 * s.pad < s.kernel || w + 2 * s.pad < s.kernel) {
      throw ConfigError("encoder stage collapses the spatial extent");
    }
    h = (h + 2 * s.pad - s.kernel) / s.stride + 1;
    w = (w + 2 * s.pad - s.kernel) / s.stride + 1;
    ch = s.out_channels;
  }
  if (global_pool) return {ch};
  return {ch, h, w};
}

Encoder::Encoder(nn::ParamStore& store, const std::string& name, const std::string& group,
                 const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const std::size_t before = store.count();
  stack_ = nn::ConvStack(store, name, group, cfg.in_channels, cfg.stages, rng);
  params_ = store.count() - before;
  const Shape declared = cfg.output_shape();
  Shape produced = stack_.output_shape(cfg.in_h, cfg.in_w);
  if (cfg.global_pool) produced = {produced[0]};
  if (declared != produced) throw InvariantViolation(name + ": declared output shape disagrees");
}

Tensor Encoder::operator()(const Tensor& x) const {
  const Shape expected{cfg_.in_channels, cfg_.in_h, cfg_.in_w};
  if (x.shape() != expected) {
    throw DimensionError("encoder expects " + shape_str(expected) + ", got " + shape_str(x.shape()));
  }
  Tensor y = (cfg_.input_center == 0.0 && cfg_.input_gain == 1.0)
                 ? stack_(x)
                 : stack_(scale(add_scalar(x, -cfg_.input_center), cfg_.input_gain));
  return cfg_.global_pool ? spatial_mean(y) : y;
}

FlopsLedger count_flops(const EncoderConfig& cfg, const std::string& prefix) {
  FlopsLedger ledger;
  std::size_t cin = cfg.in_channels, h = cfg.in_h, w = cfg.in_w;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    h = (h + 2 * s.pad - s.kernel) / s.stride + 1;
    w = (w + 2 * s.pad - s.kernel) / s.stride + 1;
    ledger.add(prefix + ".conv" + std::to_string(i),
               static_cast<std::uint64_t>(cin) * s.out_channels * s.kernel * s.kernel * h * w);
    cin = s.out_channels;
  }
  return ledger;
}

// Frames live in [0, 1]; centering them is what lets plain SGD train the
// visual convs from scratch.
constexpr double kFrameCenter = 0.5, kFrameGain = 4.0;

EncoderConfig global_encoder_config(const ModelConfig& c) {
  auto e = EncoderConfig::from_spec(c.f_G, 3, c.frame_h, c.frame_w, false);
  e.input_center = kFrameCenter;
  e.input_gain = kFrameGain;
  return e;
}

EncoderConfig audio_encoder_config(const ModelConfig& c) {
  return EncoderConfig::from_spec(c.f_A, 1, c.spec_h, c.spec_w, false);
}

EncoderConfig local_encoder_config(const ModelConfig& c) {
  auto e = EncoderConfig::from_spec(c.f_L, 3, c.P, c.P, true);
  e.input_center = kFrameCenter;
  e.input_gain = kFrameGain;
  return e;
}

}  // namespace avgn
