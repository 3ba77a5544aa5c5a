#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"

#include "avgn/model/avtest.hpp"
#include "avgn/model/fusionhead.hpp"
#include "avgn/model/gradsuite.hpp"
#include "avgn/nn/params.hpp"

using namespace avgn;

namespace {

struct Heads {
  ModelConfig cfg = gradcheck_model_config();
  nn::ParamStore store;
  AudioFusion psi;
  SequenceClassifier cls;
  Heads() {
    Rng rng(3);
    psi = AudioFusion(store, cfg, rng);
    cls = SequenceClassifier(store, "cls", "f_C", 7, cfg.d_cls, cfg.cls_hidden, cfg.C, rng);
  }
};

}  // namespace

TEST_CASE("audio fusion ignores the query when every key is the same") {
  Heads h;
  Rng rng(1);
  Tensor q1(rng.normal_array({h.cfg.d_g()}, 1.0)), q2(rng.normal_array({h.cfg.d_g()}, 1.0));
  // one audio token
  nn::KeyValue one = h.psi.prepare(Tensor(rng.normal_array({1, h.cfg.d_a()}, 1.0)));
  NdArray a = h.psi(q1, one).value(), b = h.psi(q2, one).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
  // identical tokens: uniform weights give the single-token answer
  NdArray tok = rng.normal_array({1, h.cfg.d_a()}, 1.0);
  NdArray rep({5, h.cfg.d_a()});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < h.cfg.d_a(); ++j) rep.at(t, j) = tok[j];
  NdArray single = h.psi(q1, h.psi.prepare(Tensor(tok))).value();
  NdArray many = h.psi(q2, h.psi.prepare(Tensor(rep))).value();
  for (std::size_t i = 0; i < single.size(); ++i) CHECK(many[i] == doctest::Approx(single[i]).epsilon(1e-12));
  // distinct keys: the query matters
  Tensor audio(rng.normal_array({4, h.cfg.d_a()}, 1.0));
  CHECK(h.psi(q1, h.psi.prepare(audio)).value() != h.psi(q2, h.psi.prepare(audio)).value());
}

TEST_CASE("audio fusion gradient wrt query and keys") {
  Heads h;
  Rng rng(2);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor q = testutil::param(rng, {h.cfg.d_g()}), audio = testutil::param(rng, {3, h.cfg.d_a()});
    auto rep = grad_check([&] { return testutil::probe(h.psi(q, h.psi.prepare(audio)), seed); }, {q, audio},
                          {.tol = 1e-4});
    CHECK_MESSAGE(rep.passed, rep.worst);
  }
}

TEST_CASE("sequence classifier: singleton, duplicates, normalization") {
  Heads h;
  Rng rng(4);
  Tensor b(rng.normal_array({4, 7}, 1.0));
  NdArray seq = h.cls.sequence(b).value(), fw = h.cls.framewise(b).value();
  for (std::size_t c = 0; c < h.cfg.C; ++c) CHECK(seq.at(0, c) == fw.at(0, c));
  NdArray single = h.cls.sequence(Tensor(row(b, 2).value().reshaped({1, 7}))).value();
  for (std::size_t c = 0; c < h.cfg.C; ++c) CHECK(single.at(0, c) == fw.at(2, c));
  for (std::size_t t = 0; t < 4; ++t) {
    double s = 0;
    for (std::size_t c = 0; c < h.cfg.C; ++c) s += seq.at(t, c);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  // appending a copy of a seen frame leaves the last prediction alone
  Tensor dup = stack_rows(std::vector<Tensor>{row(b, 0), row(b, 1), row(b, 2), row(b, 3), row(b, 1)});
  NdArray d = h.cls.sequence(dup).value();
  for (std::size_t c = 0; c < h.cfg.C; ++c) CHECK(d.at(4, c) == seq.at(3, c));
  // final_step is the last row of sequence
  NdArray last = h.cls.final_step(b).value();
  for (std::size_t c = 0; c < h.cfg.C; ++c) CHECK(last[c] == doctest::Approx(seq.at(3, c)).epsilon(1e-14));
  // an empty sequence cannot even be built
  CHECK_THROWS(NdArray({0, 7}));
}

TEST_CASE("running max is monotone and order-free") {
  Heads h;
  Rng rng(5);
  Tensor b(rng.normal_array({6, 7}, 1.0));
  NdArray agg = h.cls.aggregated(b).value();
  for (std::size_t t = 0; t + 1 < 6; ++t)
    for (std::size_t j = 0; j < h.cfg.d_cls; ++j) CHECK(agg.at(t, j) <= agg.at(t + 1, j));
  Tensor perm = stack_rows(std::vector<Tensor>{row(b, 3), row(b, 0), row(b, 5), row(b, 2), row(b, 4), row(b, 1)});
  NdArray p1 = h.cls.final_step(b).value(), p2 = h.cls.final_step(perm).value();
  for (std::size_t c = 0; c < h.cfg.C; ++c) CHECK(p1[c] == p2[c]);
}

TEST_CASE("framewise predictions feed pseudo labels") {
  Heads h;
  Rng rng(6);
  Tensor b(rng.normal_array({5, 7}, 1.0));
  NdArray fw = h.cls.framewise(b).value();
  auto pl = pseudo_labels(fw);
  double top = 0;
  std::vector<double> mx(5, 0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < h.cfg.C; ++c) mx[t] = std::max(mx[t], fw.at(t, c));
  for (double v : mx) top = std::max(top, v);
  for (std::size_t t = 0; t < 5; ++t) CHECK(pl[t] == doctest::Approx(mx[t] / top).epsilon(1e-15));
}

TEST_CASE("classification losses on exact and uniform predictions") {
  NdArray exact({3, 4}, 0.0);
  for (std::size_t t = 0; t < 3; ++t) exact.at(t, 2) = 1.0;
  CHECK(classification_loss(Tensor(exact), 2).item() == 0.0);
  NdArray uni({3, 4}, 0.25);
  const double l = classification_loss(Tensor(uni), 1).item();
  CHECK(l == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  // the visual and audio ledgers are sums of two and three such terms
  CHECK(3 * l == doctest::Approx(3 * std::log(4.0)));
  CHECK(2 * l == doctest::Approx(2 * std::log(4.0)));
  Rng rng(7);
  Tensor logits = testutil::param(rng, {3, 4});
  auto rep = grad_check([&] { return classification_loss(softmax(logits, 1), 3); }, {logits});
  CHECK_MESSAGE(rep.passed, rep.worst);
}

TEST_CASE("gumbel top-k limits") {
  Rng rng(8);
  const std::vector<double> s{0.3, 1.2, -0.4, 0.9, 0.1, 0.05};
  for (int i = 0; i < 1000; ++i) CHECK(gumbel_topk(s, 3, 1e-6, rng) == select_topk(s, 3));
  auto inf = s;
  inf[4] = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 200; ++i) {
    auto pick = gumbel_topk(inf, 1, 5.0, rng);
    CHECK(pick == std::vector<std::size_t>{4});
  }
  for (int i = 0; i < 50; ++i) {
    auto all = gumbel_topk(s, s.size(), 5.0, rng);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  }
}

TEST_CASE("ordered logits loss") {
  Heads h;
  Rng rng(9);
  Tensor b(rng.normal_array({5, 7}, 1.0));
  // one sampled frame: CE of that frame alone
  const double one = ordered_logits_loss(h.cls, b, {3}, 1).item();
  CHECK(one == doctest::Approx(-std::log(h.cls.framewise(b).value().at(3, 1))).epsilon(1e-12));
  // all frames, sorted by score
  const std::vector<double> s{0.2, 0.9, 0.1, 0.5, 0.7};
  auto order = select_topk(s, 5);
  Tensor sorted = gather_rows(b, order);
  const double full = ordered_logits_loss(h.cls, b, order, 2).item();
  CHECK(full == doctest::Approx(-std::log(h.cls.sequence(sorted).value().at(4, 2))).epsilon(1e-12));
}

TEST_CASE("loss ledger serializes its parts and total") {
  LossLedger l;
  l.parts = {{"L_p", 1.0}, {"L_V", 2.5}};
  l.total = 3.5;
  auto j = l.to_json();
  CHECK(j.at("L_p").get<double>() == 1.0);
  CHECK(j.at("total").get<double>() == 3.5);
}
