// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// only when something throws, or with --strict when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "avgn/model/driver.hpp"
#include "avgn/model/gradsuite.hpp"

using namespace avgn;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string worst;
  double worst_ratio = 0.0;
  for (const auto& m : gradcheck_modules()) {
    GradSuiteResult r = run_gradcheck(m, 50);
    if (!r.ok()) {
      ok = false;
      std::cout << "  gradcheck " << m << " failed: " << r.passed << "/" << r.seeds << " worst " << r.worst
                << " at seed " << r.worst_seed << " " << r.worst_input << "\n";
    }
    if (r.worst / r.tol > worst_ratio) {
      worst_ratio = r.worst / r.tol;
      worst = m;
    }
  }
  const double s = since(t0);
  return {ok && s < 120.0, fmt("%zu modules x 50 seeds, worst err/tol %.2g (%s), %.1f s",
                               gradcheck_modules().size(), worst_ratio, worst.c_str(), s)};
}

// ---------------------------------------------------------------- 2

// Tent-kernel sum over every pixel; shares nothing with the floor/corner split
// used by the library.
double tent_sample(const NdArray& frame, std::size_t ch, double x, double y) {
  const std::size_t H = frame.dim(1), W = frame.dim(2);
  double acc = 0.0;
  for (std::size_t i = 0; i < H; ++i) {
    const double wy = std::max(0.0, 1.0 - std::abs(y - static_cast<double>(i)));
    if (wy == 0.0) continue;
    for (std::size_t j = 0; j < W; ++j) {
      const double wx = std::max(0.0, 1.0 - std::abs(x - static_cast<double>(j)));
      acc += wx * wy * frame.at(ch, i, j);
    }
  }
  return acc;
}

Outcome bilinear_oracle() {
  Rng rng(20240601);
  double worst = 0.0;
  std::size_t crop_mismatch = 0;
  const std::size_t pairs = 10000;
  for (std::size_t n = 0; n < pairs; ++n) {
    const std::size_t H = static_cast<std::size_t>(rng.integer(6, 24));
    const std::size_t W = static_cast<std::size_t>(rng.integer(6, 24));
    const std::size_t P = 2 * static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(std::min(H, W) / 2 - 1)));
    const std::size_t ch = static_cast<std::size_t>(rng.integer(1, 3));
    const NdArray frame = rng.uniform_array({ch, H, W}, -1.0, 1.0);
    const double half = static_cast<double>(P) / 2.0;
    // sample positions run from c - P/2 to c + P/2 - 1, all inside the frame
    const double cx = rng.uniform(half, static_cast<double>(W) - half);
    const double cy = rng.uniform(half, static_cast<double>(H) - half);
    const NdArray got = bilinear_sample(frame, pixel_coords({cx, cy}, P), P);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t i = 0; i < P; ++i) {
        for (std::size_t j = 0; j < P; ++j) {
          const double want = tent_sample(frame, c, cx - half + static_cast<double>(j), cy - half + static_cast<double>(i));
          worst = std::max(worst, std::abs(got.at(c, i, j) - want));
        }
      }
    }
    // integer center through the public crop path: the patch is a slice
    const auto ix = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(P / 2), static_cast<std::int64_t>(W - P / 2)));
    const auto iy = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(P / 2), static_cast<std::int64_t>(H - P / 2)));
    const double nx = static_cast<double>(ix) / static_cast<double>(W);
    const double ny = static_cast<double>(iy) / static_cast<double>(H);
    if (nx * static_cast<double>(W) != static_cast<double>(ix) || ny * static_cast<double>(H) != static_cast<double>(iy)) {
      // normalized center does not round-trip; sample in pixel space instead
      const NdArray crop = bilinear_sample(frame, pixel_coords({double(ix), double(iy)}, P), P);
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < P; ++i)
          for (std::size_t j = 0; j < P; ++j)
            crop_mismatch += crop.at(c, i, j) != frame.at(c, iy - P / 2 + i, ix - P / 2 + j);
      continue;
    }
    const NdArray crop = crop_patch(Tensor(frame), Tensor(NdArray::vector({nx, ny})), P).value();
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j)
          crop_mismatch += crop.at(c, i, j) != frame.at(c, iy - P / 2 + i, ix - P / 2 + j);
  }
  return {worst <= 1e-12 && crop_mismatch == 0,
          fmt("%zu pairs, max |lib - tent oracle| %.2e, integer-center crop mismatches %zu", pairs, worst,
              crop_mismatch)};
}

// ---------------------------------------------------------------- 3

Outcome pseudo_label_normalization() {
  Rng rng(77);
  std::size_t not_one = 0, pow2_changed = 0;
  double worst_rel = 0.0;
  const std::size_t mats = 1000;
  for (std::size_t n = 0; n < mats; ++n) {
    const std::size_t T = static_cast<std::size_t>(rng.integer(1, 32));
    const std::size_t C = static_cast<std::size_t>(rng.integer(2, 12));
    const double spread = rng.uniform(0.1, 10.0);
    NdArray logits = rng.normal_array({T, C}, spread);
    const NdArray probs = softmax(Tensor(logits), 1).value();
    const auto s = pseudo_labels(probs);
    not_one += *std::max_element(s.begin(), s.end()) != 1.0;

    NdArray scaled = probs;
    const double lambda = std::exp(rng.uniform(-5.0, 5.0));
    for (auto& v : scaled.data()) v *= lambda;
    const auto s2 = pseudo_labels(scaled);
    for (std::size_t t = 0; t < T; ++t) worst_rel = std::max(worst_rel, std::abs(s2[t] - s[t]) / s[t]);

    // power-of-two scaling is exact in binary floating point
    NdArray p2 = probs;
    const double two_k = std::ldexp(1.0, static_cast<int>(rng.integer(-20, 20)));
    for (auto& v : p2.data()) v *= two_k;
    pow2_changed += pseudo_labels(p2) != s;
  }
  return {not_one == 0 && worst_rel <= 4e-16 && pow2_changed == 0,
          fmt("%zu matrices, max != 1 in %zu, rel change under rescaling %.1e (exact for 2^k: %zu differ)",
              mats, not_one, worst_rel, pow2_changed)};
}

// ---------------------------------------------------------------- 4, 5, 9

struct ToyRun {
  std::unique_ptr<AvgnModel> model;
  Dataset train, test;
  double seconds = 0.0;
};

SynthParams toy_data(std::uint64_t seed, std::size_t videos) {
  SynthParams p;
  p.seed = seed;
  p.n_videos = videos;
  p.C = 4;
  p.T = 16;
  p.n_sal = 4;
  return p;
}

ToyRun train_toy(ModelConfig cfg, const SynthParams& data, double train_fraction = 0.8) {
  ToyRun run;
  std::tie(run.train, run.test) = split_dataset(generate(data), train_fraction);
  const auto t0 = Clock::now();
  run.model = std::make_unique<AvgnModel>(cfg);
  train(*run.model, run.train);
  run.seconds = since(t0);
  return run;
}

Outcome toy_training(const ToyRun& run) {
  const EvalPoint full = evaluate(*run.model, run.test, 16, 16);
  const EvalPoint four = evaluate(*run.model, run.test, 16, 4);
  const bool ok = full.accuracy >= 0.95 && four.recall >= 0.90 && full.hit_rate >= 0.80 && run.seconds <= 600.0;
  return {ok, fmt("top-1 %.3f at (16,16), recall@4 %.3f, center hit rate %.3f, train %.0f s", full.accuracy,
                  four.recall, full.hit_rate, run.seconds)};
}

Outcome glance_trend(const ToyRun& run) {
  const std::vector<std::size_t> tgs{2, 4, 8, 16}, ks{1, 4, 8, 16};
  const auto grid = evaluate_grid(*run.model, run.test, tgs, ks);
  write_grid_csv(std::cout, grid);
  auto at = [&](std::size_t a, std::size_t b) -> const EvalPoint& { return grid[a * ks.size() + b]; };
  bool acc_ok = true, flops_ok = true, exact = true;
  std::string why;
  for (std::size_t a = 0; a < tgs.size(); ++a) {
    std::size_t inversions = 0;
    for (std::size_t b = 0; b + 1 < ks.size(); ++b) {
      const double drop = at(a, b).accuracy - at(a, b + 1).accuracy;
      if (drop > 1e-12) {
        ++inversions;
        if (drop > 0.01 + 1e-12) acc_ok = false;
      }
      if (!(at(a, b + 1).mean_flops > at(a, b).mean_flops)) flops_ok = false;
    }
    if (inversions > 1) acc_ok = false;
  }
  for (std::size_t b = 0; b < ks.size(); ++b) {
    for (std::size_t a = 0; a + 1 < tgs.size(); ++a) {
      if (!(at(a + 1, b).mean_flops > at(a, b).mean_flops)) flops_ok = false;
    }
  }
  for (const auto& p : grid) exact = exact && p.flops_match;
  return {acc_ok && flops_ok && exact,
          fmt("accuracy trend in k %s, FLOPs monotone %s, measured == analytic on every video %s",
              acc_ok ? "ok" : "broken", flops_ok ? "ok" : "broken", exact ? "yes" : "no")};
}

Outcome gumbel_topk_check(const ToyRun& run) {
  Rng rng(5150);
  const std::size_t k = 4;
  std::size_t agree = 0, draws = 0;
  std::size_t top_hits = 0, top_draws = 0;
  double uniform_rate = 0.0;
  for (const auto& v : run.test.videos) {
    const InferenceResult r = run.model->infer(v, 16, k);
    const auto det = select_topk(r.scores, k);
    if (draws < 1000) {
      for (std::size_t d = 0; d < 10 && draws < 1000; ++d, ++draws) agree += gumbel_topk(r.scores, k, 1e-12, rng) == det;
    }
    const std::size_t best = det.front();
    for (std::size_t d = 0; d < 100; ++d, ++top_draws) {
      const auto sel = gumbel_topk(r.scores, k, 5.0, rng);
      top_hits += std::find(sel.begin(), sel.end(), best) != sel.end();
    }
    uniform_rate = static_cast<double>(k) / static_cast<double>(r.scores.size());
  }
  const double agreement = static_cast<double>(agree) / static_cast<double>(draws);
  const double freq = static_cast<double>(top_hits) / static_cast<double>(top_draws);
  return {agreement >= 0.999 && freq > uniform_rate && freq < 1.0,
          fmt("tau->0 agreement %.4f over %zu draws; tau=5 top frame kept %.4f (uniform %.3f, deterministic 1)",
              agreement, draws, freq, uniform_rate)};
}

// ---------------------------------------------------------------- 6, 7

// Short runs with a large test set; seed to seed spread is wide, hence 5.
struct Reduced {
  std::size_t videos = 400;  // 200 train / 200 test
  std::size_t warmup = 8;
  std::size_t epochs = 4;
  std::size_t seeds = 5;
};

ToyRun reduced_run(ModelConfig cfg, const Reduced& r, std::uint64_t seed) {
  cfg.warmup_epochs = r.warmup;
  cfg.epochs = r.epochs;
  cfg.seed = seed;
  return train_toy(cfg, toy_data(1000 + seed, r.videos), 0.5);
}

double reduced_accuracy(ModelConfig cfg, const Reduced& r, std::uint64_t seed, std::size_t T_G, std::size_t k,
                        double* second = nullptr, std::size_t T_G2 = 0) {
  ToyRun run = reduced_run(cfg, r, seed);
  if (second) *second = evaluate(*run.model, run.test, T_G2, k).accuracy;
  return evaluate(*run.model, run.test, T_G, k).accuracy;
}

Outcome ablations(const ModelConfig& base, const Reduced& r, const std::vector<double>& full_k1) {
  struct Arm {
    const char* name;
    std::function<void(ModelConfig&)> off;
  };
  const std::vector<Arm> arms{{"audio", [](ModelConfig& c) { c.use_audio = false; }},
                              {"AV-TeST", [](ModelConfig& c) { c.use_avtest = false; }},
                              {"AESPA", [](ModelConfig& c) { c.use_aespa = false; }},
                              {"psi", [](ModelConfig& c) { c.use_psi = false; }}};
  bool ok = true;
  std::ostringstream detail;
  detail << "full k=1 acc";
  for (double a : full_k1) detail << " " << fmt("%.2f", a);
  for (const auto& arm : arms) {
    ModelConfig cfg = base;
    arm.off(cfg);
    double gap = 0.0;
    detail << "; -" << arm.name;
    for (std::size_t s = 0; s < full_k1.size(); ++s) {
      const double acc = reduced_accuracy(cfg, r, s, 16, 1);
      detail << " " << fmt("%.2f", acc);
      gap += full_k1[s] - acc;
    }
    gap /= static_cast<double>(full_k1.size());
    detail << fmt(" (mean drop %+.3f)", gap);
    ok = ok && gap > 0.0;
  }
  return {ok, detail.str()};
}

Outcome mask_robustness(const ModelConfig& base, const Reduced& r, const std::vector<double>& with16,
                        const std::vector<double>& with4) {
  ModelConfig cfg = base;
  cfg.use_mask_loss = false;
  double gap = 0.0;
  std::ostringstream detail;
  for (std::size_t s = 0; s < with16.size(); ++s) {
    double no4 = 0.0;
    const double no16 = reduced_accuracy(cfg, r, s, 16, 4, &no4, 4);
    const double drop_with = with16[s] - with4[s], drop_without = no16 - no4;
    gap += drop_without - drop_with;
    detail << fmt("seed %zu: drop with L_mask %+.2f, without %+.2f; ", s, drop_with, drop_without);
  }
  gap /= static_cast<double>(with16.size());
  detail << fmt("mean gap %+.3f", gap);
  return {gap > 0.0, detail.str()};
}

// ---------------------------------------------------------------- 8

Outcome stop_gradient_wiring() {
  ModelConfig cfg = ModelConfig::toy();
  cfg.stop_gradients = true;
  AvgnModel model(cfg);
  const Dataset d = generate(toy_data(9, 2));
  auto norms = [&](LossSwitches sw) {
    model.params().zero_grad();
    Rng rng(3);
    ForwardOptions opt;
    opt.losses = sw;
    accumulate_video(model, d.videos[0], rng, opt);
    return std::pair{model.params().grad_sq_norm("f_G"), model.params().grad_sq_norm("f_A")};
  };
  LossSwitches only;
  only.p = only.v = only.a = only.ord = false;
  const auto [g0, a0] = norms(only);
  only.p = true;
  const auto [g1, a1] = norms(only);
  model.params().zero_grad();
  return {g0 == 0.0 && a0 == 0.0 && g1 > 0.0 && a1 > 0.0,
          fmt("L_s+L_mask: |g_fG|^2 %.3g |g_fA|^2 %.3g; +L_p: %.3g %.3g", g0, a0, g1, a1)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  bool strict = false;
  std::vector<int> only;
  app.add_flag("--strict", strict, "exit nonzero when any criterion fails");
  app.add_option("--only", only, "run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> want(only.begin(), only.end());
  auto run = [&](int id) { return want.empty() || want.count(id) > 0; };

  std::vector<std::pair<int, Outcome>> results;
  auto report = [&](int id, const Outcome& o) {
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    results.emplace_back(id, o);
  };

  try {
    if (run(1)) report(1, gradient_suite());
    if (run(2)) report(2, bilinear_oracle());
    if (run(3)) report(3, pseudo_label_normalization());

    if (run(4) || run(5) || run(9)) {
      std::cout << "training the toy model (400 train / 100 test, " << ModelConfig::toy().warmup_epochs
                << " warm-up + " << ModelConfig::toy().epochs << " epochs)" << std::endl;
      ToyRun toy = train_toy(ModelConfig::toy(), toy_data(0, 500));
      if (run(4)) report(4, toy_training(toy));
      if (run(5)) report(5, glance_trend(toy));
      if (run(9)) report(9, gumbel_topk_check(toy));
    }

    if (run(6) || run(7)) {
      const Reduced r;
      std::cout << "reduced protocol for ablations: " << r.videos / 2 << " train / " << r.videos / 2 << " test videos, "
                << r.warmup << "+" << r.epochs << " epochs, " << r.seeds << " seeds" << std::endl;
      std::vector<double> k1, t16, t4;
      for (std::uint64_t s = 0; s < r.seeds; ++s) {
        ToyRun base = reduced_run(ModelConfig::toy(), r, s);
        k1.push_back(evaluate(*base.model, base.test, 16, 1).accuracy);
        t16.push_back(evaluate(*base.model, base.test, 16, 4).accuracy);
        t4.push_back(evaluate(*base.model, base.test, 4, 4).accuracy);
      }
      if (run(6)) report(6, ablations(ModelConfig::toy(), r, k1));
      if (run(7)) report(7, mask_robustness(ModelConfig::toy(), r, t16, t4));
    }

    if (run(8)) report(8, stop_gradient_wiring());
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t passed = 0;
  std::cout << "\nsummary\n";
  for (const auto& [id, o] : results) {
    std::cout << "  " << id << " " << (o.pass ? "PASS" : "FAIL") << "\n";
    passed += o.pass;
  }
  std::cout << passed << "/" << results.size() << " criteria pass" << std::endl;
  return strict && passed != results.size() ? 1 : 0;
}
