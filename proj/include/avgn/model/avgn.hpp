#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "avgn/model/aespa.hpp"
#include "avgn/model/avtest.hpp"
#include "avgn/model/config.hpp"
#include "avgn/model/encoders.hpp"
#include "avgn/model/fusionhead.hpp"
#include "avgn/model/patchex.hpp"
#include "avgn/model/synthdata.hpp"

namespace avgn {

// Coarse-to-fine midpoint order, breadth first, 0-based. For T=16 the 1-based
// order is 8 4 12 2 6 10 14 1 3 5 7 9 11 13 15 16.
std::vector<std::size_t> frame_order(std::size_t T);

struct LossSwitches {
  bool p = true, v = true, a = true, s = true, mask = true, ord = true;
};

// Values that a training step treats as constants: pseudo labels, mask
// targets and the sampled L_ord order. Captured from one pass and replayed in
// another so finite differences see the same constants.
struct FrozenTargets {
  std::vector<double> s_tilde;
  NdArray mask_targets;
  std::vector<std::size_t> ord_order;
};

struct ForwardOptions {
  LossSwitches losses;
  const FrozenTargets* frozen = nullptr;
  FrozenTargets* capture = nullptr;
};

struct LossOutput {
  Tensor total;
  std::map<std::string, Tensor> parts;
  LossLedger ledger() const;
};

struct InferenceResult {
  std::vector<double> probs;
  std::size_t predicted = 0;
  std::vector<double> scores;                      // s_t over all T (empty without AV-TeST)
  std::vector<std::size_t> selected;               // by descending score
  std::vector<std::array<double, 2>> centers;      // per frame, NaN if not processed
  FlopsLedger ledger;
  std::size_t global_encodes = 0, lazy_encodes = 0, local_encodes = 0;
};

class AvgnModel {
 public:
  explicit AvgnModel(const ModelConfig& cfg);
  AvgnModel(const AvgnModel&) = delete;
  AvgnModel& operator=(const AvgnModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const std::vector<std::size_t>& order() const { return order_; }

  // All training losses for one video under the active tape.
  LossOutput losses(const SyntheticVideo& video, Rng& rng, const ForwardOptions& opt = {}) const;

  InferenceResult infer(const SyntheticVideo& video, std::size_t T_G, std::size_t k) const;
  // Analytic cost of infer() given how many selected frames needed a lazy encode.
  FlopsLedger predicted_flops(std::size_t T_G, std::size_t k, std::size_t lazy) const;

  bool audio_active() const { return cfg_.use_audio; }
  bool aespa_active() const { return cfg_.use_aespa && cfg_.use_audio; }
  bool psi_active() const { return cfg_.use_psi && cfg_.use_audio; }

  Encoder f_G, f_A, f_L;
  AvTest avtest;
  Aespa aespa;
  PatchPolicy pi;
  AudioFusion psi;
  SequenceClassifier cls_av, cls_v, cls_a;
  LinearClassifier fc_g, fc_l, fc_a;

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  std::vector<std::size_t> order_;
  std::size_t bundle_width_ = 0;
};

}  // namespace avgn
