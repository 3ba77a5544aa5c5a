#include "avgn/model/avgn.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "avgn/numeric/errors.hpp"

namespace avgn {

std::vector<std::size_t> frame_order(std::size_t T) {
  if (T < 1) throw ArgumentError("frame_order: T must be at least 1");
  std::vector<std::size_t> out;
  out.reserve(T);
  // closed 1-based intervals
  std::deque<std::pair<std::size_t, std::size_t>> queue{{1, T}};
  while (!queue.empty()) {
    auto [a, b] = queue.front();
    queue.pop_front();
    const std::size_t mid = (a + b) / 2;
    out.push_back(mid - 1);
    if (mid > a) queue.emplace_back(a, mid - 1);
    if (mid < b) queue.emplace_back(mid + 1, b);
  }
  return out;
}

LossLedger LossOutput::ledger() const {
  LossLedger l;
  for (const auto& [name, t] : parts) l.parts[name] = t.item();
  l.total = total.item();
  return l;
}

AvgnModel::AvgnModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0x1417));
  f_G = Encoder(store_, "f_G", "f_G", global_encoder_config(cfg_), rng);
  f_A = Encoder(store_, "f_A", "f_A", audio_encoder_config(cfg_), rng);
  f_L = Encoder(store_, "f_L", "f_L", local_encoder_config(cfg_), rng);
  if (f_L.parameter_count() <= f_G.parameter_count()) {
    throw ConfigError("local encoder must be larger than the global encoder");
  }
  avtest = AvTest(store_, cfg_, rng);
  aespa = Aespa(store_, cfg_, rng);
  const Shape g = f_G.config().output_shape();
  pi = PatchPolicy(store_, cfg_, aespa_active() ? cfg_.d_f : cfg_.d_g(), g[1], g[2], rng);
  psi = AudioFusion(store_, cfg_, rng);
  bundle_width_ = cfg_.d_g() + cfg_.d_l() + cfg_.d_emb;
  cls_av = SequenceClassifier(store_, "cls_av", "f_C", bundle_width_, cfg_.d_cls, cfg_.cls_hidden, cfg_.C, rng);
  cls_v = SequenceClassifier(store_, "cls_v", "f_C", cfg_.d_g() + cfg_.d_l(), cfg_.d_cls, cfg_.cls_hidden,
                             cfg_.C, rng);
  cls_a = SequenceClassifier(store_, "cls_a", "f_C", cfg_.d_a(), cfg_.d_cls, cfg_.cls_hidden, cfg_.C, rng);
  fc_g = LinearClassifier(store_, "fc_g", "f_C", cfg_.d_g(), cfg_.C, rng);
  fc_l = LinearClassifier(store_, "fc_l", "f_C", cfg_.d_l(), cfg_.C, rng);
  fc_a = LinearClassifier(store_, "fc_a", "f_C", cfg_.d_a(), cfg_.C, rng);
  order_ = frame_order(cfg_.T);
}

namespace {

Tensor constant(const NdArray& a) { return Tensor(a, false); }

void check_video(const SyntheticVideo& v, const ModelConfig& c) {
  if (v.frames.size() != c.T || v.spectrograms.size() != c.T) {
    throw DimensionError("video has " + std::to_string(v.frames.size()) + " frames, model expects " +
                         std::to_string(c.T));
  }
  if (v.label >= c.C) throw ArgumentError("label outside the configured classes");
}

}  // namespace

LossOutput AvgnModel::losses(const SyntheticVideo& video, Rng& rng, const ForwardOptions& opt) const {
  check_video(video, cfg_);
  const std::size_t T = cfg_.T, y = video.label;
  const bool sg = cfg_.stop_gradients;
  auto cut = [sg](const Tensor& t) { return sg ? t.detach() : t; };
  const auto& sw = opt.losses;
  LossOutput out;

  // encoders
  std::vector<Tensor> g_map(T), g_pool(T);
  for (std::size_t t = 0; t < T; ++t) {
    g_map[t] = f_G(constant(video.frames[t]));
    g_pool[t] = spatial_mean(g_map[t]);
  }
  Tensor a_pool;
  if (audio_active()) {
    std::vector<Tensor> rows(T);
    for (std::size_t t = 0; t < T; ++t) rows[t] = spatial_mean(f_A(constant(video.spectrograms[t])));
    a_pool = stack_rows(rows);
  } else {
    a_pool = Tensor(NdArray({T, cfg_.d_a()}, 0.0));
  }

  // temporal glance
  Tensor s;
  if (cfg_.use_avtest) {
    std::vector<Tensor> vis(T);
    for (std::size_t t = 0; t < T; ++t) vis[t] = avtest.embed_visual(cut(g_pool[t]));
    Tensor aud = audio_active() ? avtest.embed_audio(cut(a_pool))
                                : Tensor(NdArray({T, cfg_.d_emb}, 0.0));
    s = avtest.score(avtest.forward(avtest.assemble(vis, aud, std::vector<bool>(T, false))));

    if (cfg_.use_mask_loss && sw.mask) {
      const auto masked = masked_after(order_, cfg_.glance_visible());
      std::vector<std::size_t> rows;
      for (std::size_t i = cfg_.glance_visible(); i < T; ++i) rows.push_back(order_[i]);
      if (!rows.empty()) {
        Tensor e_m = avtest.forward(avtest.assemble(vis, aud, masked));
        Tensor rec = avtest.reconstruct(gather_rows(e_m, rows));
        NdArray targets;
        if (opt.frozen) {
          targets = opt.frozen->mask_targets;
        } else {
          targets = NdArray({rows.size(), cfg_.d_emb});
          for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(vis[rows[i]].value().raw(), cfg_.d_emb, targets.raw() + i * cfg_.d_emb);
          }
        }
        if (opt.capture) opt.capture->mask_targets = targets;
        out.parts["L_mask"] = masked_reconstruction_loss(rec, targets);
      }
    }
  }

  // spatial glance over every frame in processing order
  AudioStream stream;
  if (aespa_active()) stream = aespa.prepare_audio(cut(a_pool));
  nn::KeyValue psi_kv;
  if (psi_active()) psi_kv = psi.prepare(a_pool);
  Tensor state = pi.initial_state();
  std::vector<Tensor> bundles, locals, visual_pairs, pooled_ordered, audio_ordered;
  for (std::size_t pos = 0; pos < T; ++pos) {
    const std::size_t t = order_[pos];
    Tensor fmap = aespa_active() ? aespa(cut(g_map[t]), stream) : cut(g_map[t]);
    auto [center, next] = pi.step(fmap, state);
    state = next;
    Tensor e_l = f_L(crop_patch(constant(video.frames[t]), center, cfg_.P));
    Tensor e_at = psi_active() ? psi(cut(g_pool[t]), psi_kv) : Tensor(NdArray({cfg_.d_emb}, 0.0));
    bundles.push_back(concat({g_pool[t], e_l, e_at}, 0));
    visual_pairs.push_back(concat({g_pool[t], e_l}, 0));
    locals.push_back(e_l);
    pooled_ordered.push_back(g_pool[t]);
    if (audio_active()) audio_ordered.push_back(row(a_pool, t));
  }
  Tensor B = stack_rows(bundles);

  if (sw.p) out.parts["L_p"] = classification_loss(cls_av.sequence(B), y);

  if (cfg_.use_avtest && sw.s) {
    std::vector<double> s_tilde;
    if (opt.frozen) {
      s_tilde = opt.frozen->s_tilde;
    } else {
      // pseudo labels come from detached framewise predictions
      const auto by_pos = pseudo_labels(cls_av.framewise(B.detach()).value());
      s_tilde.assign(T, 0.0);
      for (std::size_t pos = 0; pos < T; ++pos) s_tilde[order_[pos]] = by_pos[pos];
    }
    if (opt.capture) opt.capture->s_tilde = s_tilde;
    out.parts["L_s"] = saliency_loss(s, s_tilde);
  }

  if (sw.v) {
    Tensor g = stack_rows(pooled_ordered), l = stack_rows(locals), v = stack_rows(visual_pairs);
    out.parts["L_V"] = add(add(classification_loss(fc_g(g), y), classification_loss(fc_l(l), y)),
                           classification_loss(cls_v.sequence(v), y));
  }
  if (sw.a && audio_active()) {
    Tensor a = stack_rows(audio_ordered);
    out.parts["L_A"] = add(classification_loss(fc_a(a), y), classification_loss(cls_a.sequence(a), y));
  }

  if (sw.ord) {
    std::vector<std::size_t> chosen;
    if (opt.frozen) {
      chosen = opt.frozen->ord_order;
    } else {
      const auto kp = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(cfg_.k_max)));
      std::vector<double> sv(T, 0.0);
      if (cfg_.use_avtest) sv.assign(s.value().data().begin(), s.value().data().end());
      chosen = gumbel_topk(sv, kp, cfg_.temperature, rng);
    }
    if (opt.capture) opt.capture->ord_order = chosen;
    std::vector<std::size_t> pos_of(T);
    for (std::size_t pos = 0; pos < T; ++pos) pos_of[order_[pos]] = pos;
    std::vector<std::size_t> rows;
    for (auto t : chosen) rows.push_back(pos_of[t]);
    out.parts["L_ord"] = ordered_logits_loss(cls_av, B, rows, y);
  }

  if (out.parts.empty()) throw ArgumentError("no loss terms enabled");
  for (const auto& [name, term] : out.parts) {
    if (!std::isfinite(term.item())) throw NumericError("non-finite loss component " + name);
    out.total = out.total.defined() ? add(out.total, term) : term;
  }
  return out;
}

InferenceResult AvgnModel::infer(const SyntheticVideo& video, std::size_t T_G, std::size_t k) const {
  check_video(video, cfg_);
  const std::size_t T = cfg_.T;
  if (T_G < 1 || T_G > T) throw ArgumentError("infer: T_G outside [1, T]");
  if (k < 1 || k > T) throw ArgumentError("infer: k outside [1, T]");
  InferenceResult r;
  r.centers.assign(T, {std::nan(""), std::nan("")});
  MacCounter counter;
  MacCounter::Scope counting(counter);
  auto charge = [&](const std::string& stage, auto&& fn) {
    const auto before = counter.total();
    fn();
    r.ledger.add(stage, counter.total() - before);
  };

  Tensor a_pool;
  if (audio_active()) {
    charge("f_A", [&] {
      std::vector<Tensor> rows(T);
      for (std::size_t t = 0; t < T; ++t) rows[t] = spatial_mean(f_A(constant(video.spectrograms[t])));
      a_pool = stack_rows(rows);
    });
  } else {
    a_pool = Tensor(NdArray({T, cfg_.d_a()}, 0.0));
  }

  std::vector<Tensor> g_map(T), g_pool(T);
  auto encode = [&](std::size_t t) {
    charge("f_G", [&] {
      g_map[t] = f_G(constant(video.frames[t]));
      g_pool[t] = spatial_mean(g_map[t]);
    });
    ++r.global_encodes;
  };

  if (cfg_.use_avtest) {
    for (std::size_t i = 0; i < T_G; ++i) encode(order_[i]);
    charge("avtest", [&] {
      std::vector<Tensor> vis(T);
      for (std::size_t t = 0; t < T; ++t) {
        if (g_pool[t].defined()) vis[t] = avtest.embed_visual(g_pool[t]);
      }
      Tensor aud = audio_active() ? avtest.embed_audio(a_pool) : Tensor(NdArray({T, cfg_.d_emb}, 0.0));
      Tensor s = avtest.score(avtest.forward(avtest.assemble(vis, aud, masked_after(order_, T_G))));
      r.scores.assign(s.value().data().begin(), s.value().data().end());
    });
    r.selected = select_topk(r.scores, k);
  } else {
    r.selected.assign(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(k));
  }

  std::vector<bool> chosen(T, false);
  for (auto t : r.selected) chosen[t] = true;
  for (auto t : r.selected) {
    if (!g_map[t].defined()) {
      encode(t);
      ++r.lazy_encodes;
    }
  }

  AudioStream stream;
  if (aespa_active()) charge("aespa", [&] { stream = aespa.prepare_audio(a_pool); });
  nn::KeyValue psi_kv;
  if (psi_active()) charge("psi", [&] { psi_kv = psi.prepare(a_pool); });
  Tensor state = pi.initial_state();
  std::vector<Tensor> bundles;
  for (std::size_t pos = 0; pos < T; ++pos) {
    const std::size_t t = order_[pos];
    if (!chosen[t]) continue;
    Tensor fmap = g_map[t];
    if (aespa_active()) charge("aespa", [&] { fmap = aespa(g_map[t], stream); });
    Tensor center;
    charge("pi", [&] {
      auto [c, next] = pi.step(fmap, state);
      center = c;
      state = next;
    });
    const PatchCenter px = PatchPolicy::to_pixels(center.value(), cfg_.frame_w, cfg_.frame_h);
    r.centers[t] = {px.x, px.y};
    Tensor e_l;
    charge("f_L", [&] { e_l = f_L(crop_patch(constant(video.frames[t]), center, cfg_.P)); });
    ++r.local_encodes;
    Tensor e_at(NdArray({cfg_.d_emb}, 0.0));
    if (psi_active()) charge("psi", [&] { e_at = psi(g_pool[t], psi_kv); });
    bundles.push_back(concat({g_pool[t], e_l, e_at}, 0));
  }
  Tensor probs;
  charge("classifier", [&] { probs = cls_av.final_step(stack_rows(bundles)); });
  r.probs.assign(probs.value().data().begin(), probs.value().data().end());
  r.predicted = static_cast<std::size_t>(
      std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());

  const std::size_t glance = cfg_.use_avtest ? T_G : 0;
  if (r.local_encodes != r.selected.size() || r.global_encodes != glance + r.lazy_encodes) {
    throw InvariantViolation("inference budget accounting is inconsistent");
  }
  return r;
}

FlopsLedger AvgnModel::predicted_flops(std::size_t T_G, std::size_t k, std::size_t lazy) const {
  const std::size_t T = cfg_.T;
  FlopsLedger l;
  auto add = [&l](const std::string& stage, std::uint64_t m) { l.add(stage, m); };
  const std::uint64_t g = count_flops(f_G.config()).total_macs();
  const std::uint64_t a = count_flops(f_A.config()).total_macs();
  const std::uint64_t loc = count_flops(f_L.config()).total_macs();
  if (audio_active()) add("f_A", a * T);
  const std::size_t glance = cfg_.use_avtest ? T_G : 0;
  add("f_G", g * (glance + lazy));
  if (cfg_.use_avtest) add("avtest", avtest.macs(T, T_G));
  if (aespa_active()) add("aespa", aespa.audio_macs(T) + k * aespa.frame_macs(T));
  add("pi", k * pi.macs());
  add("f_L", k * loc);
  if (psi_active()) add("psi", psi.prepare_macs(T) + k * psi.query_macs(T));
  add("classifier", cls_av.final_step_macs(k));
  return l;
}

}  // namespace avgn
