#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"

#include "avgn/model/avtest.hpp"
#include "avgn/model/gradsuite.hpp"
#include "avgn/nn/params.hpp"

using namespace avgn;

namespace {

struct Fixture {
  ModelConfig cfg = gradcheck_model_config();
  nn::ParamStore store;
  AvTest tf;
  explicit Fixture(std::uint64_t seed = 2) {
    Rng rng(seed);
    tf = AvTest(store, cfg, rng);
  }
  void set(const std::string& name, double v) {
    Tensor t = store.find(name).tensor;
    t.mutable_value().fill(v);
  }
  // random visual rows and audio tokens
  std::pair<std::vector<Tensor>, Tensor> tokens(Rng& rng, std::size_t T) const {
    std::vector<Tensor> vis;
    for (std::size_t t = 0; t < T; ++t) vis.emplace_back(rng.normal_array({cfg.d_emb}, 1.0));
    return {vis, Tensor(rng.normal_array({T, cfg.d_emb}, 1.0))};
  }
};

}  // namespace

TEST_CASE("token embedding: pooling, zero weights, homogeneity") {
  Fixture f;
  NdArray m({f.cfg.d_g(), 3, 3}, 0.7);
  NdArray pooled = spatial_mean(Tensor(m)).value();
  for (double v : pooled.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

  Rng rng(4);
  Tensor x(rng.normal_array({f.cfg.d_g()}, 1.0));
  NdArray once = f.tf.embed_visual(x).value();
  NdArray twice = f.tf.embed_visual(scale(x, 2.0)).value();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]));

  f.set("avtest.emb_g.w", 0.0);
  const NdArray zero = f.tf.embed_visual(x).value();
  for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("forward handles a single token") {
  Fixture f;
  Rng rng(1);
  auto [vis, aud] = f.tokens(rng, 1);
  Tensor e = f.tf.forward(f.tf.assemble(vis, aud, {false}));
  CHECK(e.shape() == Shape{1, f.cfg.d_av});
  CHECK(e.value().all_finite());
  CHECK_THROWS_AS(f.tf.assemble({}, Tensor(NdArray({1, f.cfg.d_emb})), {}), ArgumentError);
}

TEST_CASE("positional encodings decide permutation behaviour") {
  Fixture f;
  Rng rng(8);
  auto [vis, aud] = f.tokens(rng, 3);
  std::vector<Tensor> pv{vis[2], vis[1], vis[0]};
  Tensor pa = stack_rows(std::vector<Tensor>{row(aud, 2), row(aud, 1), row(aud, 0)});
  const std::vector<bool> none(3, false);

  f.tf.positional_encoding = false;
  NdArray s = f.tf.score(f.tf.forward(f.tf.assemble(vis, aud, none))).value();
  NdArray sp = f.tf.score(f.tf.forward(f.tf.assemble(pv, pa, none))).value();
  CHECK(sp[0] == doctest::Approx(s[2]).epsilon(1e-12));
  CHECK(sp[1] == doctest::Approx(s[1]).epsilon(1e-12));
  CHECK(sp[2] == doctest::Approx(s[0]).epsilon(1e-12));

  f.tf.positional_encoding = true;
  s = f.tf.score(f.tf.forward(f.tf.assemble(vis, aud, none))).value();
  sp = f.tf.score(f.tf.forward(f.tf.assemble(pv, pa, none))).value();
  CHECK(std::abs(sp[0] - s[2]) > 1e-9);
}

TEST_CASE("saliency head is linear") {
  Fixture f;
  Rng rng(3);
  Tensor e(rng.normal_array({4, f.cfg.d_av}, 1.0));
  NdArray s1 = f.tf.score(e).value(), s2 = f.tf.score(scale(e, 2.0)).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(s2[i] == doctest::Approx(2.0 * s1[i]));
  f.set("avtest.fc_s.w", 0.0);
  f.set("avtest.fc_s.b", 0.7);
  const NdArray flat = f.tf.score(e).value();
  for (double v : flat.data()) CHECK(v == 0.7);
}

TEST_CASE("suffix masking") {
  std::vector<std::size_t> order(16);
  for (std::size_t i = 0; i < 16; ++i) order[i] = i;
  auto m = masked_after(order, 4);
  for (std::size_t t = 0; t < 16; ++t) CHECK(m[t] == (t >= 4));
  m = masked_after(order, 16);
  for (bool b : m) CHECK(!b);
  m = masked_after(order, 1);
  CHECK(!m[0]);
  for (std::size_t t = 1; t < 16; ++t) CHECK(m[t]);
  CHECK_THROWS_AS(masked_after(order, 0), ArgumentError);
  CHECK_THROWS_AS(masked_after(order, 17), ArgumentError);
  // positions count in processing order, not frame index
  m = masked_after({2, 0, 1}, 1);
  CHECK(m == std::vector<bool>{true, true, false});
}

TEST_CASE("mask token replaces visual slots only") {
  Fixture f;
  Rng rng(5);
  auto [vis, aud] = f.tokens(rng, 4);
  const std::vector<bool> masked{false, true, false, true};
  AvTokens plain = f.tf.assemble(vis, aud, std::vector<bool>(4, false));
  AvTokens m = f.tf.assemble(vis, aud, masked);
  CHECK(m.audio.value() == plain.audio.value());
  CHECK(m.audio.value() == aud.value());
  for (std::size_t t = 0; t < 4; ++t) {
    NdArray r = row(m.visual, t).value();
    CHECK(r == (masked[t] ? f.tf.mask_token().value() : vis[t].value()));
  }
  // undefined rows also take the mask token
  std::vector<Tensor> holes = vis;
  holes[2] = Tensor();
  CHECK(row(f.tf.assemble(holes, aud, std::vector<bool>(4, false)).visual, 2).value() ==
        f.tf.mask_token().value());
}

TEST_CASE("reconstruction shape and loss") {
  ModelConfig cfg = ModelConfig::toy();
  nn::ParamStore store;
  Rng rng(6);
  AvTest tf(store, cfg, rng);
  CHECK(tf.reconstruct(Tensor(rng.normal_array({12, cfg.d_av}, 1.0))).shape() == Shape{12, cfg.d_emb});

  NdArray target = rng.normal_array({3, 5}, 1.0);
  CHECK(masked_reconstruction_loss(Tensor(target), target).item() == 0.0);
  NdArray shifted = target;
  for (auto& v : shifted.data()) v += 1.0;
  CHECK(masked_reconstruction_loss(Tensor(shifted), target).item() == doctest::Approx(1.0).epsilon(1e-14));
  Tensor x = testutil::param(rng, {3, 5});
  auto rep = grad_check([&] { return masked_reconstruction_loss(x, target); }, {x});
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("pseudo labels") {
  auto pl = pseudo_labels(NdArray::matrix(3, 2, {0.2, 0.1, 0.8, 0.3, 0.4, 0.0}));
  CHECK(pl[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(pl[1] == 1.0);
  CHECK(pl[2] == doctest::Approx(0.5).epsilon(1e-15));
  for (double v : pseudo_labels(NdArray({5, 4}, 0.25))) CHECK(v == 1.0);
  CHECK(pseudo_labels(NdArray::matrix(1, 3, {0.1, 0.6, 0.3})) == std::vector<double>{1.0});
  for (double v : pseudo_labels(NdArray({3, 2}, 0.0))) CHECK(v == 0.0);
}

TEST_CASE("saliency loss") {
  const std::vector<double> target{0.25, 1.0, 0.5};
  Tensor s(NdArray::vector({0.25, 1.0, 0.5}));
  CHECK(saliency_loss(s, target).item() == 0.0);
  Tensor up(NdArray::vector({0.75, 1.5, 1.0}));
  CHECK(saliency_loss(up, target).item() == doctest::Approx(0.5).epsilon(1e-15));
  // away from the kinks
  Rng rng(12);
  for (int seed = 0; seed < 20; ++seed) {
    NdArray v(Shape{3});
    for (std::size_t i = 0; i < 3; ++i) {
      double d = rng.uniform(1e-3, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      v[i] = target[i] + d;
    }
    Tensor p = Tensor::parameter(v);
    auto rep = grad_check([&] { return saliency_loss(p, target); }, {p});
    CHECK(rep.passed);
  }
}

TEST_CASE("select_topk") {
  CHECK(select_topk({0.1, 0.9, 0.5}, 2) == std::vector<std::size_t>{1, 2});
  CHECK(select_topk({0.3, 0.3, 0.3, 0.3}, 2) == std::vector<std::size_t>{0, 1});
  CHECK(select_topk({0.2, 0.1, 0.7}, 9) == std::vector<std::size_t>{2, 0, 1});
  const std::vector<double> s{0.4, 0.8, 0.4, 0.1};
  auto base = select_topk(s, 3);
  auto ext = s;
  ext.push_back(-std::numeric_limits<double>::infinity());
  CHECK(select_topk(ext, 3) == base);
  CHECK(base == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("gradient through two layers, three frames") {
  ModelConfig cfg = gradcheck_model_config();
  cfg.av_layers = 2;
  nn::ParamStore store;
  Rng rng(21);
  AvTest tf(store, cfg, rng);
  Tensor vis = testutil::param(rng, {3, cfg.d_emb}), aud = testutil::param(rng, {3, cfg.d_emb});
  auto f = [&] {
    std::vector<Tensor> rows{row(vis, 0), row(vis, 1), row(vis, 2)};
    return testutil::probe(tf.score(tf.forward(tf.assemble(rows, aud, {false, true, false}))), 3);
  };
  auto rep = grad_check(f, {vis, aud, tf.mask_token()}, {.tol = 1e-4});
  CHECK_MESSAGE(rep.passed, rep.worst);
}
