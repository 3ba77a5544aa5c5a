#include "avgn/model/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "avgn/numeric/errors.hpp"

namespace avgn {

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_emb = 32;
  c.d_av = 64;
  c.av_ffn = 128;
  c.d_f = 32;
  c.aespa_ffn = 64;
  c.pi_hidden = 32;
  c.pi_head = 32;
  c.psi_ffn = 64;
  c.d_cls = 64;
  c.cls_hidden = 64;
  // The warm-up stands in for pretraining f_G and f_L; the joint stage then
  // fine-tunes them at a tenth of the warm-up rate.
  c.lr = {{"f_G", 0.02}, {"f_A", 0.01},   {"f_L", 0.02},  {"f_C", 0.01},
          {"pi", 0.005}, {"aespa", 0.01}, {"tf_av", 0.01}};
  c.warmup_epochs = 8;
  return c;
}

std::size_t ModelConfig::glance_visible() const {
  const auto masked = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(T)));
  return masked >= T ? 1 : T - masked;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  need(T >= 1, "T must be at least 1");
  need(T_G >= 1 && T_G <= T, "T_G must lie in [1, T]");
  need(k >= 1 && k <= T, "k must lie in [1, T]");
  need(C >= 2, "C must be at least 2");
  need(P >= 2 && P % 2 == 0, "P must be even and at least 2");
  need(P < frame_h && P < frame_w, "P must be smaller than the frame");
  for (const auto* s : {&f_G, &f_A, &f_L}) {
    need(!s->channels.empty() && s->channels.size() == s->strides.size(),
         "encoder channels and strides must have equal, nonzero length");
  }
  need(d_av == 2 * d_emb, "d_av must equal 2 * d_emb");
  need(av_heads >= 1 && d_av % av_heads == 0, "av_heads must divide d_av");
  need(aespa_heads >= 1 && d_f % aespa_heads == 0, "aespa_heads must divide d_f");
  need(psi_heads >= 1 && d_emb % psi_heads == 0, "psi_heads must divide d_emb");
  need(av_layers >= 1 && mask_layers >= 1 && aespa_layers >= 1, "layer counts must be positive");
  need(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask_ratio must lie in [0, 1)");
  need(temperature > 0.0, "temperature must be positive");
  need(k_max >= 1 && k_max <= T, "k_max must lie in [1, T]");
  need(batch_size >= 1 && epochs >= 1, "batch_size and epochs must be positive");
  need(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  for (const char* g : {"f_G", "f_A", "f_L", "f_C", "pi", "aespa", "tf_av"}) {
    need(lr.count(g) == 1, std::string("missing learning rate for ") + g);
  }
  for (const auto& [g, rate] : warmup_lr) {
    need(lr.count(g) == 1, "unknown warm-up group " + g);
    need(rate >= 0.0, "warm-up rates must be non-negative");
  }
}

void to_json(nlohmann::json& j, const ConvSpec& c) {
  j = {{"channels", c.channels}, {"strides", c.strides}, {"kernel", c.kernel}};
}

void from_json(const nlohmann::json& j, ConvSpec& c) {
  j.at("channels").get_to(c.channels);
  j.at("strides").get_to(c.strides);
  if (j.contains("kernel")) j.at("kernel").get_to(c.kernel);
}

#define AVGN_CONFIG_FIELDS(X)                                                                   \
  X(T) X(T_G) X(k) X(P) X(C) X(frame_h) X(frame_w) X(spec_h) X(spec_w) X(f_G) X(f_A) X(f_L)      \
  X(d_emb) X(d_av) X(av_heads) X(av_layers) X(av_ffn) X(mask_layers) X(positional_encoding)    \
  X(d_f) X(n_bottleneck) X(aespa_heads) X(aespa_layers) X(aespa_ffn) X(shared_audio_stream)    \
  X(pi_reduce) X(pi_hidden) X(pi_head) X(psi_heads) X(psi_ffn) X(d_cls) X(cls_hidden) X(lr)    \
  X(momentum) X(weight_decay) X(epochs) X(warmup_epochs) X(warmup_lr) X(batch_size) X(mask_ratio) X(temperature) X(k_max)    \
  X(seed) X(use_audio) X(use_avtest) X(use_aespa) X(use_psi) X(use_mask_loss) X(stop_gradients)

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json::object();
#define AVGN_WRITE(f) j[#f] = c.f;
  AVGN_CONFIG_FIELDS(AVGN_WRITE)
#undef AVGN_WRITE
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::set<std::string> known;
#define AVGN_READ(f)                           \
  known.insert(#f);                            \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  AVGN_CONFIG_FIELDS(AVGN_READ)
#undef AVGN_READ
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key " + key);
  }
}

ModelConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  ModelConfig c;
  try {
    from_json(nlohmann::json::parse(is), c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  c.validate();
  return c;
}

}  // namespace avgn
