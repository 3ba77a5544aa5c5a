#include "avgn/model/aespa.hpp"

#include "avgn/model/encoders.hpp"
#include "avgn/numeric/errors.hpp"

namespace avgn {

Aespa::Aespa(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng)
    : n_b_(cfg.n_bottleneck), d_f_(cfg.d_f), shared_(cfg.shared_audio_stream) {
  const Shape g = global_encoder_config(cfg).output_shape();
  h_ = g[1];
  w_ = g[2];
  const std::string grp = "aespa";
  proj_g_ = nn::Linear(store, "aespa.proj_g", grp, cfg.d_g(), cfg.d_f, rng);
  proj_a_ = nn::Linear(store, "aespa.proj_a", grp, cfg.d_a(), cfg.d_f, rng);
  pos_g_ = store.create("aespa.pos_g", grp, rng.normal_array({h_ * w_, cfg.d_f}, 0.02));
  if (n_b_ > 0) b_init_ = store.create("aespa.bottleneck", grp, rng.normal_array({n_b_, cfg.d_f}, 0.02));
  for (std::size_t l = 0; l < cfg.aespa_layers; ++l) {
    tf_a_.emplace_back(store, "aespa.tf_a" + std::to_string(l), grp, cfg.d_f, cfg.aespa_heads,
                       cfg.aespa_ffn, rng);
    tf_g_.emplace_back(store, "aespa.tf_g" + std::to_string(l), grp, cfg.d_f, cfg.aespa_heads,
                       cfg.aespa_ffn, rng);
  }
}

AudioStream Aespa::prepare_audio(const Tensor& pooled_audio) const {
  const std::size_t T = pooled_audio.dim(0);
  AudioStream s;
  s.z1 = add(proj_a_(pooled_audio), Tensor(nn::sinusoidal_table(T, d_f_)));
  if (!shared_) return s;
  Tensor z = s.z1;
  for (const auto& layer : tf_a_) {
    nn::KeyValue kv = layer.project(z);
    s.z.push_back(z);
    s.kv.push_back(kv);
    z = layer.forward_with(z, kv);
  }
  return s;
}

Tensor Aespa::prepare_visual(const Tensor& global_map) const {
  if (global_map.shape().size() != 3 || global_map.dim(1) != h_ || global_map.dim(2) != w_) {
    throw DimensionError("AESPA: unexpected visual map " + shape_str(global_map.shape()));
  }
  return add(proj_g_(map_to_tokens(global_map)), pos_g_);
}

Aespa::LayerOut Aespa::layer(std::size_t l, const Tensor& z_audio, const nn::KeyValue* shared_kv,
                             const Tensor& z_visual, const Tensor& bottleneck) const {
  const auto& ta = tf_a_[l];
  const auto& tg = tf_g_[l];
  const std::size_t n_v = z_visual.dim(0);
  LayerOut out;
  if (n_b_ == 0) {
    out.z_visual = tg(z_visual);
    if (!shared_kv) out.z_audio = ta(z_audio);
    return out;
  }
  Tensor b_audio;
  if (shared_kv) {
    // Audio rows were already advanced once per video; only the bottleneck
    // queries are run here, over [audio; bottleneck] keys.
    nn::KeyValue kb = ta.project(bottleneck);
    nn::KeyValue joint{concat({shared_kv->k, kb.k}, 0), concat({shared_kv->v, kb.v}, 0)};
    b_audio = ta.forward_with(bottleneck, joint);
  } else {
    const std::size_t n_a = z_audio.dim(0);
    Tensor y = ta(concat({z_audio, bottleneck}, 0));
    out.z_audio = slice_rows(y, 0, n_a);
    b_audio = slice_rows(y, n_a, n_a + n_b_);
  }
  Tensor yg = tg(concat({z_visual, bottleneck}, 0));
  out.z_visual = slice_rows(yg, 0, n_v);
  Tensor b_visual = slice_rows(yg, n_v, n_v + n_b_);
  out.bottleneck = scale(add(b_audio, b_visual), 0.5);
  return out;
}

Tensor Aespa::operator()(const Tensor& global_map, const AudioStream& audio) const {
  Tensor zg = prepare_visual(global_map);
  Tensor za = audio.z1;
  Tensor b = b_init_;
  for (std::size_t l = 0; l < tf_a_.size(); ++l) {
    const nn::KeyValue* kv = shared_ ? &audio.kv[l] : nullptr;
    LayerOut o = layer(l, shared_ ? audio.z[l] : za, kv, zg, b);
    zg = o.z_visual;
    b = o.bottleneck;
    if (!shared_) za = o.z_audio;
  }
  return tokens_to_map(zg, h_, w_);
}

std::uint64_t Aespa::audio_macs(std::size_t T) const {
  std::uint64_t m = proj_a_.macs(T);
  if (shared_) {
    for (const auto& layer : tf_a_) m += layer.self_macs(T);
  }
  return m;
}

std::uint64_t Aespa::frame_macs(std::size_t T) const {
  const std::size_t n_v = h_ * w_;
  std::uint64_t m = proj_g_.macs(n_v);
  for (std::size_t l = 0; l < tf_a_.size(); ++l) {
    const auto& ta = tf_a_[l];
    m += tf_g_[l].self_macs(n_v + n_b_);
    if (shared_) {
      if (n_b_ > 0) {
        m += ta.attn.kv_macs(n_b_) + ta.attn.attend_macs(n_b_, T + n_b_) + ta.ffn_macs(n_b_);
      }
    } else {
      m += ta.self_macs(T + n_b_);
    }
  }
  return m;
}

}  // namespace avgn
