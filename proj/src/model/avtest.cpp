#include "avgn/model/avtest.hpp"

#include <algorithm>
#include <numeric>

#include "avgn/numeric/errors.hpp"

namespace avgn {

AvTest::AvTest(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng)
    : d_emb_(cfg.d_emb), d_av_(cfg.d_av), d_a_(cfg.d_a()), d_g_(cfg.d_g()) {
  const std::string g = "tf_av";
  emb_g_ = nn::Linear(store, "avtest.emb_g", g, cfg.d_g(), cfg.d_emb, rng);
  emb_a_ = nn::Linear(store, "avtest.emb_a", g, cfg.d_a(), cfg.d_emb, rng);
  mask_token_ = store.create("avtest.mask_token", g, rng.normal_array({cfg.d_emb}, 0.02));
  for (std::size_t i = 0; i < cfg.av_layers; ++i) {
    layers_.emplace_back(store, "avtest.layer" + std::to_string(i), g, cfg.d_av, cfg.av_heads,
                         cfg.av_ffn, rng);
  }
  final_norm_ = nn::LayerNorm(store, "avtest.norm", g, cfg.d_av);
  fc_s_ = nn::Linear(store, "avtest.fc_s", g, cfg.d_av, 1, rng);
  for (std::size_t i = 0; i < cfg.mask_layers; ++i) {
    mask_layers_.emplace_back(store, "avtest.mask_layer" + std::to_string(i), g, cfg.d_av,
                              cfg.av_heads, cfg.av_ffn, rng);
  }
  mask_norm_ = nn::LayerNorm(store, "avtest.mask_norm", g, cfg.d_av);
  mask_head_ = nn::Linear(store, "avtest.mask_head", g, cfg.d_av, cfg.d_emb, rng);
  positional_encoding = cfg.positional_encoding;
}

AvTokens AvTest::assemble(const std::vector<Tensor>& visual_rows, const Tensor& audio_tokens,
                          const std::vector<bool>& masked) const {
  const std::size_t T = visual_rows.size();
  if (T == 0) throw ArgumentError("AV-TeST: empty sequence");
  if (masked.size() != T || audio_tokens.shape() != Shape{T, d_emb_}) {
    throw DimensionError("AV-TeST: token count mismatch");
  }
  AvTokens out;
  out.masked = masked;
  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (masked[t] || !visual_rows[t].defined()) {
      out.masked[t] = true;
      rows.push_back(mask_token_);
    } else {
      rows.push_back(visual_rows[t]);
    }
  }
  out.visual = stack_rows(rows);
  out.audio = audio_tokens;
  return out;
}

Tensor AvTest::forward(const AvTokens& tokens) const {
  const std::size_t T = tokens.visual.dim(0);
  if (T == 0) throw ArgumentError("AV-TeST: empty sequence");
  Tensor x = concat({tokens.visual, tokens.audio}, 1);
  if (positional_encoding) x = add(x, Tensor(nn::sinusoidal_table(T, d_av_)));
  for (const auto& layer : layers_) x = layer(x);
  return final_norm_(x);
}

Tensor AvTest::score(const Tensor& e_tf) const {
  return reshape(fc_s_(e_tf), {e_tf.dim(0)});
}

Tensor AvTest::reconstruct(const Tensor& e_tf_masked) const {
  Tensor x = e_tf_masked;
  for (const auto& layer : mask_layers_) x = layer(x);
  return mask_head_(mask_norm_(x));
}

std::uint64_t AvTest::macs(std::size_t T, std::size_t n_visual) const {
  std::uint64_t m = emb_g_.macs(n_visual) + emb_a_.macs(T) + fc_s_.macs(T);
  for (const auto& layer : layers_) m += layer.self_macs(T);
  return m;
}

std::uint64_t AvTest::reconstruct_macs(std::size_t m) const {
  std::uint64_t total = mask_head_.macs(m);
  for (const auto& layer : mask_layers_) total += layer.self_macs(m);
  return total;
}

std::vector<bool> masked_after(const std::vector<std::size_t>& order, std::size_t T_G) {
  if (T_G < 1 || T_G > order.size()) {
    throw ArgumentError("T_G=" + std::to_string(T_G) + " outside [1, " +
                        std::to_string(order.size()) + "]");
  }
  std::vector<bool> masked(order.size(), false);
  for (std::size_t i = T_G; i < order.size(); ++i) masked[order[i]] = true;
  return masked;
}

std::vector<double> pseudo_labels(const NdArray& p) {
  if (p.rank() != 2) throw DimensionError("pseudo_labels: expected [T x C]");
  const std::size_t T = p.dim(0), C = p.dim(1);
  std::vector<double> frame_max(T);
  double global = 0.0;
  bool any = false;
  for (std::size_t t = 0; t < T; ++t) {
    double m = p.at(t, 0);
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, p.at(t, c));
    frame_max[t] = m;
    if (!any || m > global) global = m;
    any = true;
  }
  if (global == 0.0) return std::vector<double>(T, 0.0);
  for (auto& v : frame_max) v = v / global;
  // The arg-max frame divides by itself, which is exactly 1 in IEEE arithmetic.
  return frame_max;
}

Tensor saliency_loss(const Tensor& s, const std::vector<double>& targets) {
  if (s.shape() != Shape{targets.size()}) throw DimensionError("saliency_loss: length mismatch");
  return l1(s, Tensor(NdArray::vector(targets)));
}

Tensor masked_reconstruction_loss(const Tensor& reconstructed, const NdArray& targets) {
  return mse(reconstructed, Tensor(targets));
}

std::vector<std::size_t> select_topk(const std::vector<double>& s, std::size_t k) {
  if (k < 1) throw ArgumentError("select_topk: k must be at least 1");
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(std::min(k, s.size()));
  return idx;
}

}  // namespace avgn
