#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avgn/model/config.hpp"
#include "avgn/nn/layers.hpp"

namespace avgn {

// Cross-attention block: one visual query over the video's audio tokens,
// followed by a residual feed-forward sublayer. The query does not enter a
// residual, so the output is always a mixture of audio values.
class AudioFusion {
 public:
  AudioFusion() = default;
  AudioFusion(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng);

  // Pooled audio [T x D_A] -> keys/values over the projected audio tokens.
  nn::KeyValue prepare(const Tensor& pooled_audio) const;
  // Pooled global feature [D_G] -> e^AT [d_emb].
  Tensor operator()(const Tensor& pooled_g, const nn::KeyValue& audio) const;

  std::uint64_t prepare_macs(std::size_t T) const;
  std::uint64_t query_macs(std::size_t T) const;

  nn::Linear q_in, kv_in;
  nn::MultiHeadAttention attn;
  nn::LayerNorm norm;
  nn::Linear fc1, fc2;
};

// Per-step linear projection, running elementwise max over steps, two-layer
// head, softmax.
class SequenceClassifier {
 public:
  SequenceClassifier() = default;
  SequenceClassifier(nn::ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t in, std::size_t width, std::size_t hidden, std::size_t classes,
                     Rng& rng);

  // bundles [n x in] in processing order -> probabilities [n x C]; row t
  // aggregates steps 0..t.
  Tensor sequence(const Tensor& bundles) const;
  // Same weights, one step at a time, no aggregation.
  Tensor framewise(const Tensor& bundles) const;
  // Probabilities [C] after the last step only; the head runs once.
  Tensor final_step(const Tensor& bundles) const;
  std::uint64_t final_step_macs(std::size_t n) const {
    return proj.macs(n) + head1.macs(1) + head2.macs(1);
  }
  // Pre-softmax aggregated features [n x width] after the running max.
  Tensor aggregated(const Tensor& bundles) const { return cummax_rows(proj(bundles)); }

  std::uint64_t macs(std::size_t n) const;
  std::size_t in() const { return proj.in(); }

  nn::Linear proj, head1, head2;
};

// Single linear layer followed by softmax.
class LinearClassifier {
 public:
  LinearClassifier() = default;
  LinearClassifier(nn::ParamStore& store, const std::string& name, const std::string& group,
                   std::size_t in, std::size_t classes, Rng& rng)
      : fc(store, name, group, in, classes, rng) {}
  Tensor operator()(const Tensor& x) const { return softmax(fc(x), x.shape().size() - 1); }
  nn::Linear fc;
};

struct LossLedger {
  std::map<std::string, double> parts;  // L_p, L_V, L_A, L_s, L_mask, L_ord
  double total = 0.0;
  nlohmann::json to_json() const;
};

// mean over t of CE(p_t, y); probs [T x C]
Tensor classification_loss(const Tensor& probs, std::size_t y);

// Indices of the k' largest s_i / temperature + Gumbel noise, in descending
// perturbed order. Not differentiable.
std::vector<std::size_t> gumbel_topk(const std::vector<double>& s, std::size_t k,
                                     double temperature, Rng& rng);

// Running-max classifier over bundles gathered in `order`; CE of the final step.
Tensor ordered_logits_loss(const SequenceClassifier& cls, const Tensor& bundles,
                           const std::vector<std::size_t>& order, std::size_t y);

}  // namespace avgn
