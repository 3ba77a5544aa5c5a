#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "avgn/model/avgn.hpp"

namespace avgn {

struct EpochRecord {
  std::size_t epoch = 0;
  LossLedger mean_losses;
  double seconds = 0.0;
  bool warmup = false;
};

using EpochHook = std::function<void(const EpochRecord&)>;

struct EvalPoint {
  std::size_t T_G = 0, k = 0;
  double accuracy = 0.0;
  double mAP = 0.0;
  double recall = 0.0;     // saliency recall@k
  double hit_rate = 0.0;   // center hits over processed truth-salient frames
  double mean_flops = 0.0;
  bool flops_match = true;  // every video's measured ledger equals the analytic one
};

struct RunReport {
  std::vector<EpochRecord> epochs;
  std::vector<EvalPoint> grid;
  nlohmann::json to_json() const;
};

// Trains in place: cfg.warmup_epochs of encoder warm-up, then cfg.epochs of the
// full objective. One JSON line per epoch goes to `log` when given; `hook`
// sees every finished epoch.
std::vector<EpochRecord> train(AvgnModel& model, const Dataset& data, std::ostream* log = nullptr,
                               const EpochHook& hook = {});

// Stand-in for pretrained visual encoders. f_G on whole frames and f_L on
// uniformly placed patches, each through its linear head, with the video label
// applied to the per-class max over frames. Backward runs; returns the ledger.
LossLedger warmup_video(const AvgnModel& model, const SyntheticVideo& video, Rng& rng);

// One optimizer-free step: forward, backward and the ledger for one video.
LossLedger accumulate_video(const AvgnModel& model, const SyntheticVideo& video, Rng& rng,
                            const ForwardOptions& opt = {});

EvalPoint evaluate(const AvgnModel& model, const Dataset& data, std::size_t T_G, std::size_t k);
std::vector<EvalPoint> evaluate_grid(const AvgnModel& model, const Dataset& data,
                                     const std::vector<std::size_t>& tgs,
                                     const std::vector<std::size_t>& ks);

// Macro average precision; scores[i][c] ranks videos for class c.
double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::size_t>& labels, std::size_t C);

void save_model(const std::filesystem::path& path, const AvgnModel& model);
std::unique_ptr<AvgnModel> load_model(const std::filesystem::path& path);

void write_grid_csv(std::ostream& os, const std::vector<EvalPoint>& grid);

}  // namespace avgn
