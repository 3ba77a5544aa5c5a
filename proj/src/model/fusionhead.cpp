#include "avgn/model/fusionhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "avgn/numeric/errors.hpp"

namespace avgn {

AudioFusion::AudioFusion(nn::ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  const std::string g = "f_C";
  q_in = nn::Linear(store, "psi.q_in", g, cfg.d_g(), cfg.d_emb, rng);
  kv_in = nn::Linear(store, "psi.kv_in", g, cfg.d_a(), cfg.d_emb, rng);
  attn = nn::MultiHeadAttention(store, "psi.attn", g, cfg.d_emb, cfg.psi_heads, rng);
  norm = nn::LayerNorm(store, "psi.norm", g, cfg.d_emb);
  fc1 = nn::Linear(store, "psi.fc1", g, cfg.d_emb, cfg.psi_ffn, rng);
  fc2 = nn::Linear(store, "psi.fc2", g, cfg.psi_ffn, cfg.d_emb, rng);
}

nn::KeyValue AudioFusion::prepare(const Tensor& pooled_audio) const {
  return attn.project_kv(kv_in(pooled_audio));
}

Tensor AudioFusion::operator()(const Tensor& pooled_g, const nn::KeyValue& audio) const {
  Tensor q = reshape(q_in(pooled_g), {1, q_in.out()});
  Tensor a = attn.attend(q, audio);
  Tensor y = add(a, fc2(relu(fc1(norm(a)))));
  return reshape(y, {q_in.out()});
}

std::uint64_t AudioFusion::prepare_macs(std::size_t T) const {
  return kv_in.macs(T) + attn.kv_macs(T);
}

std::uint64_t AudioFusion::query_macs(std::size_t T) const {
  return q_in.macs(1) + attn.attend_macs(1, T) + fc1.macs(1) + fc2.macs(1);
}

SequenceClassifier::SequenceClassifier(nn::ParamStore& store, const std::string& name,
                                       const std::string& group, std::size_t in,
                                       std::size_t width, std::size_t hidden,
                                       std::size_t classes, Rng& rng) {
  proj = nn::Linear(store, name + ".proj", group, in, width, rng);
  head1 = nn::Linear(store, name + ".head1", group, width, hidden, rng);
  head2 = nn::Linear(store, name + ".head2", group, hidden, classes, rng);
}

Tensor SequenceClassifier::sequence(const Tensor& bundles) const {
  if (bundles.shape().size() != 2 || bundles.dim(0) == 0) {
    throw ArgumentError("classifier: need at least one bundle");
  }
  return softmax(head2(relu(head1(aggregated(bundles)))), 1);
}

Tensor SequenceClassifier::framewise(const Tensor& bundles) const {
  return softmax(head2(relu(head1(proj(bundles)))), 1);
}

Tensor SequenceClassifier::final_step(const Tensor& bundles) const {
  if (bundles.shape().size() != 2 || bundles.dim(0) == 0) {
    throw ArgumentError("classifier: need at least one bundle");
  }
  Tensor last = row(aggregated(bundles), bundles.dim(0) - 1);
  return softmax(head2(relu(head1(last))), 0);
}

std::uint64_t SequenceClassifier::macs(std::size_t n) const {
  return proj.macs(n) + head1.macs(n) + head2.macs(n);
}

nlohmann::json LossLedger::to_json() const {
  nlohmann::json j(parts);
  j["total"] = total;
  return j;
}

Tensor classification_loss(const Tensor& probs, std::size_t y) { return cross_entropy(probs, y); }

std::vector<std::size_t> gumbel_topk(const std::vector<double>& s, std::size_t k,
                                     double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ArgumentError("gumbel_topk: temperature must be positive");
  if (k < 1) throw ArgumentError("gumbel_topk: k must be at least 1");
  std::vector<double> perturbed(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double u = rng.uniform();
    if (u <= 0.0) u = std::numeric_limits<double>::min();
    perturbed[i] = s[i] / temperature - std::log(-std::log(u));
  }
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return perturbed[a] > perturbed[b]; });
  idx.resize(std::min(k, s.size()));
  return idx;
}

Tensor ordered_logits_loss(const SequenceClassifier& cls, const Tensor& bundles,
                           const std::vector<std::size_t>& order, std::size_t y) {
  return cross_entropy(cls.final_step(gather_rows(bundles, order)), y);
}

}  // namespace avgn
