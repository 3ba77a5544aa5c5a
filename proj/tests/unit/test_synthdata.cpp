#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"

#include "avgn/model/synthdata.hpp"
#include "avgn/numeric/errors.hpp"
#include "avgn/numeric/rng.hpp"

using namespace avgn;

namespace {

SynthParams small(std::size_t n = 12) {
  SynthParams p;
  p.n_videos = n;
  p.seed = 17;
  return p;
}

// Slide every class glyph over the frame; the class with the smallest
// squared error at its best offset wins.
std::size_t nearest_template(const NdArray& frame, const std::vector<NdArray>& glyphs, std::size_t sprite) {
  const double on[3] = {0.95, 0.85, 0.35};
  const std::size_t H = frame.dim(1), W = frame.dim(2);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t c = 0; c < glyphs.size(); ++c) {
    for (std::size_t r0 = 0; r0 + sprite <= H; ++r0)
      for (std::size_t c0 = 0; c0 + sprite <= W; ++c0) {
        double e = 0;
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t r = 0; r < sprite; ++r)
            for (std::size_t k = 0; k < sprite; ++k) {
              const double want = glyphs[c].at(r, k) > 0.5 ? on[ch] : 0.25;
              const double d = frame.at(ch, r0 + r, c0 + k) - want;
              e += d * d;
            }
        if (e < best) {
          best = e;
          arg = c;
        }
      }
  }
  return arg;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  Dataset a = generate(small()), b = generate(small());
  REQUIRE(a.videos.size() == b.videos.size());
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    CHECK(a.videos[i].label == b.videos[i].label);
    CHECK(a.videos[i].salient == b.videos[i].salient);
    for (std::size_t t = 0; t < a.params.T; ++t) {
      CHECK(a.videos[i].frames[t] == b.videos[i].frames[t]);
      CHECK(a.videos[i].spectrograms[t] == b.videos[i].spectrograms[t]);
    }
  }
  SynthParams other = small();
  other.seed = 18;
  CHECK(generate(other).videos[0].frames[0] != a.videos[0].frames[0]);
}

TEST_CASE("planted structure") {
  SynthParams p = small(10);
  p.snr = p.audio_snr = std::numeric_limits<double>::infinity();
  Dataset d = generate(p);
  std::vector<std::size_t> per_class(p.C, 0);
  for (const auto& v : d.videos) {
    ++per_class[v.label];
    std::size_t n = 0;
    const auto [lo, hi] = tone_band(v.label, p.C, p.spec_w);
    for (std::size_t t = 0; t < p.T; ++t) {
      n += v.salient[t];
      CHECK(std::isnan(v.centers[t][0]) == !v.salient[t]);
      if (v.salient[t]) {
        // sprite fully inside
        CHECK(v.centers[t][0] >= 4.0);
        CHECK(v.centers[t][0] <= 28.0);
        CHECK(v.centers[t][1] >= 4.0);
        CHECK(v.centers[t][1] <= 28.0);
      }
      for (std::size_t f = 0; f < p.spec_w; ++f) {
        const bool in_band = f >= lo && f < hi;
        CHECK(v.spectrograms[t].at(0, 5, f) == (v.salient[t] && in_band ? 1.0 : 0.0));
      }
    }
    CHECK(n == p.n_sal);
  }
  // 10 videos over 4 classes
  for (auto c : per_class) CHECK((c == 2 || c == 3));

  p.n_sal = p.T;
  for (const auto& v : generate(p).videos)
    for (bool s : v.salient) CHECK(s);
}

TEST_CASE("templates and bands are distinct") {
  auto g = class_templates(6, 8);
  for (std::size_t a = 0; a < g.size(); ++a)
    for (std::size_t b = a + 1; b < g.size(); ++b) CHECK(g[a] != g[b]);
  std::size_t prev_hi = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    auto [lo, hi] = tone_band(c, 4, 64);
    CHECK(lo >= prev_hi);
    CHECK(hi > lo);
    prev_hi = hi;
  }
}

TEST_CASE("noiseless sprites are classified perfectly by template matching") {
  SynthParams p = small(16);
  p.snr = p.audio_snr = std::numeric_limits<double>::infinity();
  Dataset d = generate(p);
  auto glyphs = class_templates(p.C, p.sprite);
  std::size_t right = 0, total = 0;
  for (const auto& v : d.videos)
    for (std::size_t t = 0; t < p.T; ++t)
      if (v.salient[t]) {
        right += nearest_template(v.frames[t], glyphs, p.sprite) == v.label;
        ++total;
      }
  CHECK(right == total);
}

TEST_CASE("audio-only saliency leaves frames empty") {
  SynthParams p = small(4);
  p.audio_only_saliency = true;
  p.snr = std::numeric_limits<double>::infinity();
  p.distractors = 0;
  for (const auto& v : generate(p).videos)
    for (std::size_t t = 0; t < p.T; ++t)
      for (double x : v.frames[t].data()) CHECK(x == 0.25);
}

TEST_CASE("invalid parameters") {
  SynthParams p = small();
  p.C = 1;
  CHECK_THROWS_AS(generate(p), ArgumentError);
  p = small();
  p.n_sal = 0;
  CHECK_THROWS_AS(generate(p), ArgumentError);
  p.n_sal = p.T + 1;
  CHECK_THROWS_AS(generate(p), ArgumentError);
}

TEST_CASE("truth metrics") {
  SynthParams p = small(1);
  SyntheticVideo v = generate(p).videos[0];
  std::vector<std::size_t> truth, other;
  for (std::size_t t = 0; t < p.T; ++t) (v.salient[t] ? truth : other).push_back(t);
  std::vector<std::array<double, 2>> none(p.T, {std::nan(""), std::nan("")});
  CHECK(truth_metrics(truth, none, v, 16).recall == 1.0);
  other.resize(4);
  CHECK(truth_metrics(other, none, v, 16).recall == 0.0);

  // random picks: hypergeometric mean k * n_sal / T / min(k, n_sal) = 0.25
  Rng rng(3);
  double mean = 0;
  const int draws = 20000;
  std::vector<std::size_t> all(p.T);
  for (std::size_t t = 0; t < p.T; ++t) all[t] = t;
  for (int i = 0; i < draws; ++i) {
    std::shuffle(all.begin(), all.end(), rng.engine());
    mean += truth_metrics({all.begin(), all.begin() + 4}, none, v, 16).recall;
  }
  CHECK(mean / draws == doctest::Approx(0.25).epsilon(0.03));

  // a center hits when both coordinates are within P/2
  auto centers = none;
  const std::size_t t0 = truth[0], t1 = truth[1];
  centers[t0] = {v.centers[t0][0] + 8.0, v.centers[t0][1] - 8.0};
  centers[t1] = {v.centers[t1][0] + 8.01, v.centers[t1][1]};
  auto m = truth_metrics(truth, centers, v, 16);
  CHECK(m.scored == 2);
  CHECK(m.hits == 1);
  CHECK(m.hit_rate == 0.5);
}

TEST_CASE("dataset files round trip") {
  SynthParams p = small(3);
  p.audio_snr = std::numeric_limits<double>::infinity();
  Dataset d = generate(p);
  auto dir = std::filesystem::temp_directory_path() / "avgn_synth_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(dir, d);
  Dataset e = load_dataset(dir);
  CHECK(std::isinf(e.params.audio_snr));
  CHECK(e.params.seed == p.seed);
  REQUIRE(e.videos.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(e.videos[i].label == d.videos[i].label);
    CHECK(e.videos[i].salient == d.videos[i].salient);
    for (std::size_t t = 0; t < p.T; ++t) {
      for (std::size_t k = 0; k < d.videos[i].frames[t].size(); ++k)
        CHECK(e.videos[i].frames[t][k] == static_cast<double>(static_cast<float>(d.videos[i].frames[t][k])));
      if (d.videos[i].salient[t]) CHECK(e.videos[i].centers[t] == d.videos[i].centers[t]);
    }
  }
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), ArgumentError);
}

TEST_CASE("split keeps order and sizes") {
  Dataset d = generate(small(10));
  auto [a, b] = split_dataset(d, 0.8);
  CHECK(a.videos.size() == 8);
  CHECK(b.videos.size() == 2);
  CHECK(b.videos[0].id == 8);
  CHECK_THROWS_AS(split_dataset(d, 1.0), ArgumentError);
}
