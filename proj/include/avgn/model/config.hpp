#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace avgn {

struct ConvSpec {
  std::vector<std::size_t> channels;
  std::vector<std::size_t> strides;
  std::size_t kernel = 3;
};

// Every knob of the model, trainer and evaluation budget. Serialized
// field-for-field as the run config JSON.
struct ModelConfig {
  // geometry
  std::size_t T = 16;
  std::size_t T_G = 12;
  std::size_t k = 14;
  std::size_t P = 16;
  std::size_t C = 4;
  std::size_t frame_h = 32, frame_w = 32;
  std::size_t spec_h = 96, spec_w = 64;

  // encoders
  ConvSpec f_G{{8, 16, 64}, {2, 2, 2}};
  ConvSpec f_A{{8, 16, 32}, {4, 2, 2}};
  ConvSpec f_L{{16, 32, 64, 128}, {2, 2, 2, 2}};

  // AV-TeST
  std::size_t d_emb = 128;
  std::size_t d_av = 256;
  std::size_t av_heads = 4;
  std::size_t av_layers = 2;
  std::size_t av_ffn = 512;
  std::size_t mask_layers = 2;
  bool positional_encoding = true;

  // AESPA
  std::size_t d_f = 256;
  std::size_t n_bottleneck = 4;
  std::size_t aespa_heads = 4;
  std::size_t aespa_layers = 4;
  std::size_t aespa_ffn = 512;
  bool shared_audio_stream = true;

  // patch policy
  std::size_t pi_reduce = 8;
  std::size_t pi_hidden = 128;
  std::size_t pi_head = 64;

  // audio fusion and classifiers
  std::size_t psi_heads = 4;
  std::size_t psi_ffn = 256;
  std::size_t d_cls = 128;
  std::size_t cls_hidden = 128;

  // training
  std::map<std::string, double> lr{{"f_G", 0.001}, {"f_A", 0.001}, {"f_L", 0.002},
                                   {"f_C", 0.01},  {"pi", 2e-4},   {"aespa", 2e-4},
                                   {"tf_av", 0.01}};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 30;
  // Encoder warm-up epochs before the joint objective; 0 when f_G and f_L
  // start from pretrained weights.
  std::size_t warmup_epochs = 0;
  // Warm-up rates; groups left out stay frozen during the warm-up.
  std::map<std::string, double> warmup_lr{{"f_G", 0.2}, {"f_L", 0.2}, {"f_C", 0.01}};
  std::size_t batch_size = 8;
  double mask_ratio = 0.75;
  double temperature = 5.0;
  std::size_t k_max = 16;
  std::uint64_t seed = 0;

  // ablations
  bool use_audio = true;
  bool use_avtest = true;
  bool use_aespa = true;
  bool use_psi = true;
  bool use_mask_loss = true;
  bool stop_gradients = true;

  // Reduced widths for single-core runs; geometry and encoders unchanged.
  static ModelConfig toy();

  // Throws ConfigError on any inconsistency.
  void validate() const;

  // derived
  std::size_t d_g() const { return f_G.channels.back(); }
  std::size_t d_a() const { return f_A.channels.back(); }
  std::size_t d_l() const { return f_L.channels.back(); }
  std::size_t glance_visible() const;  // T_G' used by the masked-reconstruction pass
};

void to_json(nlohmann::json& j, const ConvSpec& c);
void from_json(const nlohmann::json& j, ConvSpec& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig load_config(const std::string& path);

}  // namespace avgn
