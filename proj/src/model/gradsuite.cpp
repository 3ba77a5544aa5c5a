#include "avgn/model/gradsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "avgn/model/avgn.hpp"
#include "avgn/numeric/errors.hpp"
#include "avgn/numeric/gradcheck.hpp"

namespace avgn {

namespace {

Tensor param(Rng& rng, const Shape& shape, double scale = 1.0) {
  return Tensor::parameter(rng.normal_array(shape, scale));
}

// Fixed random weighting of every output element, reduced to a scalar.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed ^ 0x9E3779B97F4A7C15ULL);
  return sum(mul(y, Tensor(rng.normal_array(y.shape(), 1.0))));
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

struct Case {
  std::function<Tensor()> f;
  std::vector<Tensor> inputs;
  std::vector<std::string> names;
  std::size_t max_elements = 0;
  bool retry_finer = false;
};

// A seed-dependent handful of parameter tensors, so the seeds together cover
// the whole store.
void add_params(Case& c, const nn::ParamStore& store, Rng& rng, std::size_t count,
                const std::string& prefix = "") {
  std::vector<const nn::ParamEntry*> pool;
  for (const auto& e : store.entries())
    if (prefix.empty() || e.name.rfind(prefix, 0) == 0) pool.push_back(&e);
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  for (std::size_t i = 0; i < std::min(count, pool.size()); ++i) {
    c.inputs.push_back(pool[i]->tensor);
    c.names.push_back(pool[i]->name);
  }
}

SyntheticVideo random_video(const ModelConfig& cfg, Rng& rng) {
  SyntheticVideo v;
  v.label = pick(rng, 0, cfg.C - 1);
  for (std::size_t t = 0; t < cfg.T; ++t) {
    v.frames.push_back(rng.uniform_array({3, cfg.frame_h, cfg.frame_w}, 0.0, 1.0));
    v.spectrograms.push_back(rng.uniform_array({1, cfg.spec_h, cfg.spec_w}, 0.0, 1.0));
  }
  v.salient.assign(cfg.T, false);
  v.centers.assign(cfg.T, {std::nan(""), std::nan("")});
  return v;
}

// Everything a seed's check needs to stay alive while grad_check runs.
struct Fixture {
  std::unique_ptr<AvgnModel> model;
  std::unique_ptr<nn::ParamStore> store;
  std::shared_ptr<void> extra;
};

Case loss_case(const std::string& which, std::uint64_t seed, Fixture& fx) {
  ModelConfig cfg = gradcheck_model_config();
  cfg.seed = seed;
  fx.model = std::make_unique<AvgnModel>(cfg);
  Rng rng(derive_seed(seed, 0x10c5));
  // Zero-initialized biases put empty conv windows exactly on a ReLU kink;
  // jitter everything so the check runs at a generic point.
  for (auto& e : fx.model->params().entries()) {
    for (auto& v : e.tensor.mutable_value().data()) v += rng.normal() * 0.05;
  }
  auto video = std::make_shared<SyntheticVideo>(random_video(cfg, rng));
  auto frozen = std::make_shared<FrozenTargets>();
  LossSwitches sw{false, false, false, false, false, false};
  if (which == "L_p") sw.p = true;
  if (which == "L_V") sw.v = true;
  if (which == "L_A") sw.a = true;
  if (which == "L_s") sw.s = true;
  if (which == "L_mask") sw.mask = true;
  if (which == "L_ord") sw.ord = true;
  {
    Rng r(seed);
    ForwardOptions capture;
    capture.losses = sw;
    capture.capture = frozen.get();
    fx.model->losses(*video, r, capture);
  }
  fx.extra = std::make_shared<std::pair<std::shared_ptr<SyntheticVideo>, std::shared_ptr<FrozenTargets>>>(
      video, frozen);
  const AvgnModel* m = fx.model.get();
  Case c;
  c.f = [m, video, frozen, sw, seed] {
    Rng r(seed);
    ForwardOptions opt;
    opt.losses = sw;
    opt.frozen = frozen.get();
    return m->losses(*video, r, opt).total;
  };
  add_params(c, fx.model->params(), rng, 10);
  c.max_elements = 4;
  c.retry_finer = true;
  return c;
}

Case build_case(const std::string& module, std::uint64_t seed, Fixture& fx) {
  Rng rng(derive_seed(seed, 0x6C));
  Case c;
  if (module == "matmul") {
    const std::size_t m = pick(rng, 1, 6), k = pick(rng, 1, 6), n = pick(rng, 1, 6);
    Tensor a = param(rng, {m, k}), b = param(rng, {k, n});
    c.f = [a, b, seed] { return probe(matmul(a, b), seed); };
    c.inputs = {a, b};
    c.names = {"a", "b"};
  } else if (module == "softmax") {
    const std::size_t r = pick(rng, 1, 5), n = pick(rng, 2, 7), axis = pick(rng, 0, 1);
    Tensor x = param(rng, {r, n}, 2.0);
    c.f = [x, axis, seed] { return probe(softmax(x, axis), seed); };
    c.inputs = {x};
    c.names = {"x"};
  } else if (module == "layer_norm") {
    const std::size_t r = pick(rng, 1, 5), n = pick(rng, 2, 9);
    Tensor x = param(rng, {r, n}), g = param(rng, {n}), b = param(rng, {n});
    c.f = [x, g, b, seed] { return probe(layer_norm(x, g, b), seed); };
    c.inputs = {x, g, b};
    c.names = {"x", "gain", "bias"};
  } else if (module == "attention") {
    const std::size_t heads = pick(rng, 1, 3), dh = pick(rng, 1, 3);
    const std::size_t lq = pick(rng, 1, 5), lk = pick(rng, 1, 5), d = heads * dh;
    Tensor q = param(rng, {lq, d}), k = param(rng, {lk, d}), v = param(rng, {lk, d});
    c.f = [q, k, v, heads, seed] { return probe(scaled_dot_product_attention(q, k, v, heads), seed); };
    c.inputs = {q, k, v};
    c.names = {"q", "k", "v"};
  } else if (module == "bilinear_frame" || module == "bilinear_center") {
    const std::size_t P = 2 * pick(rng, 1, 4);
    const std::size_t H = P + pick(rng, 2, 8), W = P + pick(rng, 2, 8);
    Tensor frame = Tensor(rng.uniform_array({3, H, W}, 0.0, 1.0), module == "bilinear_frame");
    // Center in pixels, kept off the sampling grid by at least 0.1 so the
    // difference quotient never straddles a corner switch.
    auto draw = [&](std::size_t extent) {
      const double lo = static_cast<double>(P) / 2.0 + 0.01;
      const double hi = static_cast<double>(extent) - 1.0 - static_cast<double>(P) / 2.0 + 0.99;
      for (;;) {
        const double x = rng.uniform(lo, hi);
        const double frac = x - std::floor(x);
        if (frac > 0.1 && frac < 0.9 && x - static_cast<double>(P) / 2.0 >= 0.0 &&
            x + static_cast<double>(P) / 2.0 - 1.0 <= static_cast<double>(extent - 1))
          return x;
      }
    };
    const double cx = draw(W), cy = draw(H);
    NdArray cn({2});
    cn[0] = cx / static_cast<double>(W);
    cn[1] = cy / static_cast<double>(H);
    Tensor center(cn, module == "bilinear_center");
    c.f = [frame, center, P, seed] { return probe(crop_patch(frame, center, P), seed); };
    if (module == "bilinear_frame") {
      c.inputs = {frame};
      c.names = {"frame"};
    } else {
      c.inputs = {center};
      c.names = {"center"};
    }
  } else if (module == "aespa" || module == "psi") {
    ModelConfig cfg = gradcheck_model_config();
    cfg.shared_audio_stream = pick(rng, 0, 1) == 1;
    fx.store = std::make_unique<nn::ParamStore>();
    const Shape g = global_encoder_config(cfg).output_shape();
    Tensor audio = param(rng, {cfg.T, cfg.d_a()});
    if (module == "aespa") {
      auto a = std::make_shared<Aespa>(*fx.store, cfg, rng);
      fx.extra = a;
      Tensor gmap = param(rng, g);
      c.f = [a, gmap, audio, seed] { return probe((*a)(gmap, a->prepare_audio(audio)), seed); };
      c.inputs = {gmap, audio};
      c.names = {"global_map", "pooled_audio"};
    } else {
      auto p = std::make_shared<AudioFusion>(*fx.store, cfg, rng);
      fx.extra = p;
      Tensor pooled = param(rng, {cfg.d_g()});
      c.f = [p, pooled, audio, seed] { return probe((*p)(pooled, p->prepare(audio)), seed); };
      c.inputs = {pooled, audio};
      c.names = {"pooled_g", "pooled_audio"};
    }
    add_params(c, *fx.store, rng, 8);
    c.max_elements = 6;
  } else if (module.rfind("L_", 0) == 0) {
    return loss_case(module, seed, fx);
  } else {
    throw ArgumentError("unknown gradcheck module '" + module + "'");
  }
  return c;
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{
      "matmul", "softmax", "layer_norm", "attention", "bilinear_frame", "bilinear_center", "aespa",
      "psi",    "L_p",     "L_V",        "L_A",       "L_s",            "L_mask",          "L_ord"};
  return names;
}

double gradcheck_default_tol(const std::string& module) {
  return module == "bilinear_center" ? 1e-6 : 1e-4;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.T = 4;
  c.T_G = 4;
  c.k = 4;
  c.P = 6;
  c.C = 3;
  c.frame_h = c.frame_w = 12;
  c.spec_h = c.spec_w = 8;
  c.f_G = {{3, 4}, {2, 2}};
  c.f_A = {{3, 4}, {2, 2}};
  c.f_L = {{4, 6}, {2, 2}};
  c.d_emb = 4;
  c.d_av = 8;
  c.av_heads = 2;
  c.av_layers = 1;
  c.av_ffn = 8;
  c.mask_layers = 1;
  c.d_f = 4;
  c.n_bottleneck = 2;
  c.aespa_heads = 2;
  c.aespa_layers = 2;
  c.aespa_ffn = 6;
  c.pi_reduce = 2;
  c.pi_hidden = 4;
  c.pi_head = 4;
  c.psi_heads = 2;
  c.psi_ffn = 6;
  c.d_cls = 5;
  c.cls_hidden = 5;
  c.k_max = 4;
  c.mask_ratio = 0.5;
  // finite differences need every path live
  c.stop_gradients = false;
  return c;
}

GradSuiteResult run_gradcheck(const std::string& module, std::size_t seeds, double tol) {
  GradSuiteResult r;
  r.module = module;
  r.tol = tol > 0.0 ? tol : gradcheck_default_tol(module);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < seeds; ++s) {
    Fixture fx;
    Case c = build_case(module, 1000 + s, fx);
    GradCheckOptions opt;
    opt.tol = r.tol;
    opt.max_elements = c.max_elements;
    opt.retry_finer = c.retry_finer;
    const GradCheckReport rep = grad_check(c.f, c.inputs, opt, c.names);
    ++r.seeds;
    for (const auto& e : rep.inputs) r.retried += e.retried;
    if (rep.passed) ++r.passed;
    if (rep.worst >= r.worst) {
      r.worst = rep.worst;
      r.worst_seed = 1000 + s;
      for (const auto& e : rep.inputs)
        if (e.max_rel_error == rep.worst) r.worst_input = e.name;
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace avgn
