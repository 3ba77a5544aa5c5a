#include "avgn/model/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "avgn/numeric/errors.hpp"
#include "avgn/numeric/rng.hpp"

namespace avgn {

namespace {
constexpr std::uint64_t kTemplateSeed = 0x5EED5EEDULL;
constexpr double kBackground = 0.25;
constexpr std::array<double, 3> kSpriteColor{0.95, 0.85, 0.35};
constexpr double kVisualAmplitude = kSpriteColor[0] - kBackground;
constexpr double kToneAmplitude = 1.0;
}  // namespace

void SynthParams::validate() const {
  if (C < 2) throw ArgumentError("synth: C must be at least 2");
  if (T < 1 || n_sal < 1 || n_sal > T) throw ArgumentError("synth: need 1 <= n_sal <= T");
  if (n_videos < 1) throw ArgumentError("synth: need at least one video");
  if (sprite < 2 || sprite > frame_h || sprite > frame_w) throw ArgumentError("synth: sprite does not fit");
  if (!(snr > 0.0) || !(audio_snr > 0.0)) throw ArgumentError("synth: snr must be positive");
  if (spec_w < 2 * C) throw ArgumentError("synth: spectrogram too narrow for C bands");
}

std::vector<NdArray> class_templates(std::size_t C, std::size_t sprite) {
  // Stripe glyphs first (orientation x period), random glyphs once those run out.
  static constexpr int kStripes[][3] = {{1, 0, 2}, {0, 1, 2}, {1, 1, 2}, {1, -1, 2},
                                        {1, 0, 4}, {0, 1, 4}, {1, 1, 4}, {1, -1, 4}};
  Rng rng(kTemplateSeed);
  std::vector<NdArray> out;
  std::size_t next_stripe = 0;
  while (out.size() < C) {
    NdArray t({sprite, sprite});
    if (next_stripe < std::size(kStripes)) {
      const auto& [a, b, period] = kStripes[next_stripe++];
      const int n = static_cast<int>(sprite);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          const int phase = ((a * r + b * c) % (2 * period) + 2 * period) % (2 * period);
          t[static_cast<std::size_t>(r * n + c)] = phase < period ? 1.0 : 0.0;
        }
    } else {
      for (auto& v : t.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    // keep glyphs mutually distinct by at least a quarter of their pixels
    bool distinct = true;
    for (const auto& o : out) {
      std::size_t diff = 0;
      for (std::size_t i = 0; i < t.size(); ++i) diff += t[i] != o[i];
      distinct &= diff * 4 >= t.size();
    }
    if (distinct) out.push_back(std::move(t));
  }
  return out;
}

std::pair<std::size_t, std::size_t> tone_band(std::size_t c, std::size_t C, std::size_t spec_w) {
  const std::size_t slot = spec_w / C;
  const std::size_t width = std::max<std::size_t>(1, slot / 2);
  const std::size_t first = c * slot + (slot - width) / 2;
  return {first, first + width};
}

Dataset generate(const SynthParams& p) {
  p.validate();
  const auto templates = class_templates(p.C, p.sprite);
  const double sigma_v = std::isinf(p.snr) ? 0.0 : kVisualAmplitude / p.snr;
  const double sigma_a = std::isinf(p.audio_snr) ? 0.0 : kToneAmplitude / p.audio_snr;
  Dataset d;
  d.params = p;
  d.videos.reserve(p.n_videos);
  for (std::size_t i = 0; i < p.n_videos; ++i) {
    Rng rng(derive_seed(p.seed, i));
    SyntheticVideo v;
    v.id = i;
    v.label = i % p.C;
    v.salient.assign(p.T, false);
    v.centers.assign(p.T, {std::nan(""), std::nan("")});
    // choose n_sal salient frames uniformly without replacement
    std::vector<std::size_t> frames(p.T);
    for (std::size_t t = 0; t < p.T; ++t) frames[t] = t;
    std::shuffle(frames.begin(), frames.end(), rng.engine());
    for (std::size_t j = 0; j < p.n_sal; ++j) v.salient[frames[j]] = true;

    const auto [band_lo, band_hi] = tone_band(v.label, p.C, p.spec_w);
    for (std::size_t t = 0; t < p.T; ++t) {
      NdArray frame({3, p.frame_h, p.frame_w}, kBackground);
      for (std::size_t k = 0; k < p.distractors; ++k) {
        const auto s = static_cast<std::size_t>(rng.integer(2, 3));
        const auto r0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(p.frame_h - s)));
        const auto c0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(p.frame_w - s)));
        const double level = rng.uniform(0.0, 1.0);
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t r = r0; r < r0 + s; ++r)
            for (std::size_t c = c0; c < c0 + s; ++c) frame.at(ch, r, c) = level;
      }
      if (v.salient[t] && !p.audio_only_saliency) {
        const auto r0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(p.frame_h - p.sprite)));
        const auto c0 = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(p.frame_w - p.sprite)));
        const auto& glyph = templates[v.label];
        for (std::size_t r = 0; r < p.sprite; ++r)
          for (std::size_t c = 0; c < p.sprite; ++c) {
            const bool on = glyph.at(r, c) > 0.5;
            for (std::size_t ch = 0; ch < 3; ++ch)
              frame.at(ch, r0 + r, c0 + c) = on ? kSpriteColor[ch] : kBackground;
          }
        const double half = static_cast<double>(p.sprite) / 2.0;
        v.centers[t] = {static_cast<double>(c0) + half, static_cast<double>(r0) + half};
      }
      if (sigma_v > 0.0) {
        for (auto& x : frame.data()) x = std::clamp(x + sigma_v * rng.normal(), 0.0, 1.0);
      }
      v.frames.push_back(std::move(frame));

      NdArray spec({1, p.spec_h, p.spec_w}, 0.0);
      if (sigma_a > 0.0) {
        for (auto& x : spec.data()) x = sigma_a * rng.normal();
      }
      if (v.salient[t]) {
        for (std::size_t r = 0; r < p.spec_h; ++r)
          for (std::size_t f = band_lo; f < band_hi; ++f) spec.at(0, r, f) += kToneAmplitude;
      }
      v.spectrograms.push_back(std::move(spec));
    }
    d.videos.push_back(std::move(v));
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double frac) {
  if (!(frac > 0.0 && frac < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  const auto n_first = static_cast<std::size_t>(std::floor(frac * static_cast<double>(d.videos.size())));
  Dataset a, b;
  a.params = d.params;
  b.params = d.params;
  for (std::size_t i = 0; i < d.videos.size(); ++i) (i < n_first ? a : b).videos.push_back(d.videos[i]);
  a.params.n_videos = a.videos.size();
  b.params.n_videos = b.videos.size();
  return {std::move(a), std::move(b)};
}

namespace {

void write_f32(std::ostream& os, const NdArray& a) {
  for (double v : a.data()) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

NdArray read_f32(std::istream& is, const Shape& shape) {
  NdArray a(shape);
  for (auto& v : a.data()) {
    std::uint32_t bits;
    is.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    v = f;
  }
  if (!is) throw ArgumentError("dataset array file truncated");
  return a;
}

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

double read_number_or_inf(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = {{"seed", p.seed},
       {"n_videos", p.n_videos},
       {"C", p.C},
       {"T", p.T},
       {"n_sal", p.n_sal},
       {"snr", number_or_inf(p.snr)},
       {"audio_snr", number_or_inf(p.audio_snr)},
       {"frame_h", p.frame_h},
       {"frame_w", p.frame_w},
       {"spec_h", p.spec_h},
       {"spec_w", p.spec_w},
       {"sprite", p.sprite},
       {"distractors", p.distractors},
       {"audio_only_saliency", p.audio_only_saliency}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
  j.at("seed").get_to(p.seed);
  j.at("n_videos").get_to(p.n_videos);
  j.at("C").get_to(p.C);
  j.at("T").get_to(p.T);
  j.at("n_sal").get_to(p.n_sal);
  p.snr = read_number_or_inf(j.at("snr"));
  p.audio_snr = read_number_or_inf(j.at("audio_snr"));
  j.at("frame_h").get_to(p.frame_h);
  j.at("frame_w").get_to(p.frame_w);
  j.at("spec_h").get_to(p.spec_h);
  j.at("spec_w").get_to(p.spec_w);
  j.at("sprite").get_to(p.sprite);
  j.at("distractors").get_to(p.distractors);
  j.at("audio_only_saliency").get_to(p.audio_only_saliency);
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["params"] = d.params;
  manifest["videos"] = nlohmann::json::array();
  for (const auto& v : d.videos) {
    const std::string file = "video_" + std::to_string(v.id) + ".f32";
    std::ofstream os(dir / file, std::ios::binary);
    if (!os) throw ArgumentError("cannot write " + (dir / file).string());
    for (const auto& f : v.frames) write_f32(os, f);
    for (const auto& s : v.spectrograms) write_f32(os, s);
    nlohmann::json centers = nlohmann::json::array();
    for (const auto& c : v.centers) {
      centers.push_back(std::isnan(c[0]) ? nlohmann::json(nullptr) : nlohmann::json({c[0], c[1]}));
    }
    manifest["videos"].push_back(
        {{"id", v.id}, {"label", v.label}, {"salient", v.salient}, {"centers", centers}, {"file", file}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ArgumentError("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  Dataset d;
  d.params = manifest.at("params").get<SynthParams>();
  const auto& p = d.params;
  for (const auto& e : manifest.at("videos")) {
    SyntheticVideo v;
    v.id = e.at("id").get<std::size_t>();
    v.label = e.at("label").get<std::size_t>();
    v.salient = e.at("salient").get<std::vector<bool>>();
    for (const auto& c : e.at("centers")) {
      if (c.is_null()) {
        v.centers.push_back({std::nan(""), std::nan("")});
      } else {
        v.centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
      }
    }
    std::ifstream fs(dir / e.at("file").get<std::string>(), std::ios::binary);
    if (!fs) throw ArgumentError("missing array file for video " + std::to_string(v.id));
    for (std::size_t t = 0; t < p.T; ++t) v.frames.push_back(read_f32(fs, {3, p.frame_h, p.frame_w}));
    for (std::size_t t = 0; t < p.T; ++t) v.spectrograms.push_back(read_f32(fs, {1, p.spec_h, p.spec_w}));
    d.videos.push_back(std::move(v));
  }
  return d;
}

TruthMetrics truth_metrics(const std::vector<std::size_t>& topk,
                           const std::vector<std::array<double, 2>>& centers,
                           const SyntheticVideo& video, std::size_t P) {
  TruthMetrics m;
  std::size_t n_sal = 0;
  for (bool s : video.salient) n_sal += s;
  std::size_t found = 0;
  for (auto t : topk) found += video.salient.at(t);
  const std::size_t denom = std::min(topk.size(), n_sal);
  m.recall = denom == 0 ? 0.0 : static_cast<double>(found) / static_cast<double>(denom);
  const double half = static_cast<double>(P) / 2.0;
  for (std::size_t t = 0; t < video.salient.size() && t < centers.size(); ++t) {
    if (!video.salient[t] || std::isnan(centers[t][0]) || std::isnan(video.centers[t][0])) continue;
    ++m.scored;
    const double dist = std::max(std::abs(centers[t][0] - video.centers[t][0]),
                                 std::abs(centers[t][1] - video.centers[t][1]));
    if (dist <= half) ++m.hits;
  }
  m.hit_rate = m.scored == 0 ? 0.0 : static_cast<double>(m.hits) / static_cast<double>(m.scored);
  return m;
}

}  // namespace avgn
