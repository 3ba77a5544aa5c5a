#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "avgn/numeric/ndarray.hpp"
#include "json.hpp"

namespace avgn {

struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t n_videos = 500;
  std::size_t C = 4;
  std::size_t T = 16;
  std::size_t n_sal = 4;
  // Signal-to-noise of the planted sprite and tone; infinity means noiseless.
  double snr = 4.0;
  double audio_snr = 4.0;
  std::size_t frame_h = 32, frame_w = 32;
  std::size_t spec_h = 96, spec_w = 64;
  std::size_t sprite = 8;
  std::size_t distractors = 3;  // small random blobs in every frame
  // Salient clips carry the tone but no frame carries a sprite.
  bool audio_only_saliency = false;

  void validate() const;
};

struct SyntheticVideo {
  std::size_t id = 0;
  std::size_t label = 0;                 // 0-based class
  std::vector<NdArray> frames;           // T x [3 x H x W], values in [0, 1]
  std::vector<NdArray> spectrograms;     // T x [1 x spec_h x spec_w]
  std::vector<bool> salient;             // T
  std::vector<std::array<double, 2>> centers;  // sprite center (x, y) in pixels; NaN if none
};

struct Dataset {
  SynthParams params;
  std::vector<SyntheticVideo> videos;
};

// 0/1 glyph [sprite x sprite] for each class, fixed across seeds.
std::vector<NdArray> class_templates(std::size_t C, std::size_t sprite);
// Frequency bins [first, last) of class c's tone band.
std::pair<std::size_t, std::size_t> tone_band(std::size_t c, std::size_t C, std::size_t spec_w);

Dataset generate(const SynthParams& params);

// First floor(frac * n) videos of a class-interleaved order go to `first`.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double frac);

void save_dataset(const std::filesystem::path& dir, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& dir);

struct TruthMetrics {
  double recall = 0.0;    // |topk & salient| / min(k, n_sal)
  double hit_rate = 0.0;  // over truth-salient frames that received a center
  std::size_t hits = 0;
  std::size_t scored = 0;  // truth-salient frames with a center
};

// centers[t] is NaN for frames without a predicted center.
TruthMetrics truth_metrics(const std::vector<std::size_t>& topk,
                           const std::vector<std::array<double, 2>>& centers,
                           const SyntheticVideo& video, std::size_t P);

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);

}  // namespace avgn
