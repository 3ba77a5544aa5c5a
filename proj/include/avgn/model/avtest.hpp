#pragma once

#include <cstdint>
#include <vector>

#include "avgn/model/config.hpp"
#include "avgn/nn/layers.hpp"

namespace avgn {

// Per-frame visual/audio token matrices [T x d_emb]. masked[t] marks frames
// whose visual slot holds the mask token.
struct AvTokens {
  Tensor visual;
  Tensor audio;
  std::vector<bool> masked;
};

// Audio-visual temporal saliency transformer plus its mask encoder.
class AvTest {
 public:
  AvTest() = default;
  AvTest(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);

  // Pooled global feature [D_G] -> visual token [d_emb].
  Tensor embed_visual(const Tensor& pooled_g) const { return emb_g_(pooled_g); }
  // Pooled audio features [T x D_A] -> audio tokens [T x d_emb].
  Tensor embed_audio(const Tensor& pooled_a) const { return emb_a_(pooled_a); }
  // Visual token rows, with the mask token where rows[t] is undefined or masked[t].
  AvTokens assemble(const std::vector<Tensor>& visual_rows, const Tensor& audio_tokens,
                    const std::vector<bool>& masked) const;

  // e^TF [T x d_av]; full self-attention over all T positions.
  Tensor forward(const AvTokens& tokens) const;
  // s [T]
  Tensor score(const Tensor& e_tf) const;
  // Masked rows of e^TF [m x d_av] -> reconstructed visual tokens [m x d_emb].
  Tensor reconstruct(const Tensor& e_tf_masked) const;

  const Tensor& mask_token() const { return mask_token_; }
  Tensor& mask_token() { return mask_token_; }
  bool positional_encoding = true;

  // MACs of forward + score over T tokens, with n_visual embedded visual rows.
  std::uint64_t macs(std::size_t T, std::size_t n_visual) const;
  std::uint64_t reconstruct_macs(std::size_t m) const;

 private:
  nn::Linear emb_g_, emb_a_, fc_s_, mask_head_;
  Tensor mask_token_;
  std::vector<nn::TransformerLayer> layers_, mask_layers_;
  nn::LayerNorm final_norm_, mask_norm_;
  std::size_t d_emb_ = 0, d_av_ = 0, d_a_ = 0, d_g_ = 0;
};

// Frames whose visual slot is masked: processing positions >= T_G in `order`.
std::vector<bool> masked_after(const std::vector<std::size_t>& order, std::size_t T_G);

// s~_t = max_c p'_{c,t} / max_t max_c p'_{c,t}; all-zero input gives zeros.
std::vector<double> pseudo_labels(const NdArray& framewise_probs);

// Mean |s - s~| with s~ held constant.
Tensor saliency_loss(const Tensor& s, const std::vector<double>& targets);

// Mean squared error against detached targets.
Tensor masked_reconstruction_loss(const Tensor& reconstructed, const NdArray& targets);

// min(k, T) indices by descending score; ties go to the smaller index.
std::vector<std::size_t> select_topk(const std::vector<double>& s, std::size_t k);

}  // namespace avgn
