#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "avgn/model/config.hpp"
#include "avgn/nn/layers.hpp"

namespace avgn {

// Named stage -> multiply-accumulate count. FLOPs = 2 x MACs.
class FlopsLedger {
 public:
  // Zero counts are not recorded, so ledgers compare by their nonzero stages.
  void add(const std::string& stage, std::uint64_t macs) {
    if (macs > 0) stages_[stage] += macs;
  }
  void merge(const FlopsLedger& other);
  std::uint64_t macs(const std::string& stage) const;
  std::uint64_t total_macs() const;
  std::uint64_t flops() const { return 2 * total_macs(); }
  const std::map<std::string, std::uint64_t>& stages() const { return stages_; }
  bool operator==(const FlopsLedger& other) const = default;

 private:
  std::map<std::string, std::uint64_t> stages_;
};

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t in_h = 32, in_w = 32;
  std::vector<nn::ConvStage> stages;
  bool global_pool = false;  // true: output is the [C] spatial mean
  // Input is mapped to (x - input_center) * input_gain before the first conv.
  double input_center = 0.0, input_gain = 1.0;

  static EncoderConfig from_spec(const ConvSpec& spec, std::size_t in_channels, std::size_t h,
                                 std::size_t w, bool global_pool);
  // Declared output shape: [C x H x W], or [C] when pooled.
  Shape output_shape() const;
};

// Conv stack with a fixed declared input shape.
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParamStore& store, const std::string& name, const std::string& group,
          const EncoderConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  const EncoderConfig& config() const { return cfg_; }
  std::size_t parameter_count() const { return params_; }

 private:
  EncoderConfig cfg_;
  nn::ConvStack stack_;
  std::size_t params_ = 0;
};

// Analytic per-layer MACs: conv = Cin*Cout*Kh*Kw*Hout*Wout. Stages are named
// "<prefix>.conv<i>".
FlopsLedger count_flops(const EncoderConfig& cfg, const std::string& prefix = "enc");

EncoderConfig global_encoder_config(const ModelConfig& c);
EncoderConfig audio_encoder_config(const ModelConfig& c);
EncoderConfig local_encoder_config(const ModelConfig& c);

}  // namespace avgn
