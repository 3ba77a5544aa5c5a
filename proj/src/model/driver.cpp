#include "avgn/model/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "avgn/nn/optim.hpp"
#include "avgn/numeric/errors.hpp"

namespace avgn {

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch}, {"losses", e.mean_losses.to_json()}, {"seconds", e.seconds}});
  }
  j["grid"] = nlohmann::json::array();
  for (const auto& g : grid) {
    j["grid"].push_back({{"T_G", g.T_G}, {"k", g.k}, {"accuracy", g.accuracy}, {"mAP", g.mAP},
                         {"recall", g.recall}, {"hit_rate", g.hit_rate}, {"flops", g.mean_flops},
                         {"flops_match", g.flops_match}});
  }
  return j;
}

LossLedger accumulate_video(const AvgnModel& model, const SyntheticVideo& video, Rng& rng,
                            const ForwardOptions& opt) {
  Tape tape;
  LossOutput out;
  {
    Tape::Scope scope(tape);
    out = model.losses(video, rng, opt);
  }
  tape.backward(out.total);
  return out.ledger();
}

namespace {

void write_epoch(std::ostream* log, const char* stage, const EpochRecord& rec, const nn::Sgd& opt) {
  if (!log) return;
  nlohmann::json line = {{"stage", stage}, {"epoch", rec.epoch}, {"losses", rec.mean_losses.to_json()},
                         {"lr_f_C", opt.lr("f_C")}, {"seconds", rec.seconds}};
  *log << line.dump() << '\n' << std::flush;
}

// CE of the label against the per-class max over frames of a linear head.
Tensor max_over_frames_loss(const LinearClassifier& head, const Tensor& features, std::size_t y) {
  Tensor run = cummax_rows(head.fc(features));
  return cross_entropy(softmax(row(run, run.dim(0) - 1), 0), y);
}

}  // namespace

LossLedger warmup_video(const AvgnModel& model, const SyntheticVideo& video, Rng& rng) {
  const auto& cfg = model.config();
  Tape tape;
  LossLedger ledger;
  {
    Tape::Scope scope(tape);
    std::vector<Tensor> g, l;
    const double sx = static_cast<double>(cfg.frame_w - cfg.P) / static_cast<double>(cfg.frame_w);
    const double sy = static_cast<double>(cfg.frame_h - cfg.P) / static_cast<double>(cfg.frame_h);
    for (const auto& frame : video.frames) {
      Tensor f(frame, false);
      g.push_back(spatial_mean(model.f_G(f)));
      // same center range pi can reach
      const NdArray c = NdArray::vector({(1.0 - sx) / 2.0 + sx * rng.uniform(), (1.0 - sy) / 2.0 + sy * rng.uniform()});
      l.push_back(model.f_L(crop_patch(f, Tensor(c, false), cfg.P)));
    }
    Tensor lg = max_over_frames_loss(model.fc_g, stack_rows(g), video.label);
    Tensor ll = max_over_frames_loss(model.fc_l, stack_rows(l), video.label);
    Tensor total = add(lg, ll);
    if (!std::isfinite(total.item())) throw NumericError("non-finite warm-up loss");
    ledger.parts = {{"W_G", lg.item()}, {"W_L", ll.item()}};
    ledger.total = total.item();
    tape.backward(total);
  }
  return ledger;
}

std::vector<EpochRecord> train(AvgnModel& model, const Dataset& data, std::ostream* log, const EpochHook& hook) {
  const auto& cfg = model.config();
  if (data.videos.empty()) throw ArgumentError("train: empty dataset");
  const std::size_t batches_per_epoch = (data.videos.size() + cfg.batch_size - 1) / cfg.batch_size;
  Rng rng(derive_seed(cfg.seed, 0x7EA1));
  std::vector<std::size_t> idx(data.videos.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<EpochRecord> records;

  auto run_epoch = [&](nn::Sgd& opt, std::size_t epoch, auto&& per_video) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(lo + cfg.batch_size, idx.size());
      model.params().zero_grad();
      for (std::size_t i = lo; i < hi; ++i) {
        const LossLedger l = per_video(data.videos[idx[i]]);
        for (const auto& [k, v] : l.parts) rec.mean_losses.parts[k] += v;
        rec.mean_losses.total += l.total;
      }
      opt.step(1.0 / static_cast<double>(hi - lo));
    }
    model.params().zero_grad();
    const double n = static_cast<double>(idx.size());
    for (auto& [k, v] : rec.mean_losses.parts) v /= n;
    rec.mean_losses.total /= n;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
  };

  if (cfg.warmup_epochs > 0) {
    std::map<std::string, double> lr;
    for (const auto& [group, rate] : cfg.lr) lr[group] = cfg.warmup_lr.count(group) ? cfg.warmup_lr.at(group) : 0.0;
    nn::Sgd opt(model.params(), lr, cfg.momentum, cfg.weight_decay, batches_per_epoch * cfg.warmup_epochs);
    for (std::size_t epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
      EpochRecord rec = run_epoch(opt, epoch, [&](const SyntheticVideo& v) { return warmup_video(model, v, rng); });
      rec.warmup = true;
      write_epoch(log, "warmup", rec, opt);
      if (hook) hook(rec);
      records.push_back(std::move(rec));
    }
  }

  nn::Sgd opt(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay, batches_per_epoch * cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec = run_epoch(opt, epoch, [&](const SyntheticVideo& v) { return accumulate_video(model, v, rng); });
    write_epoch(log, "joint", rec, opt);
    if (hook) hook(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

double mean_average_precision(const std::vector<std::vector<double>>& scores,
                              const std::vector<std::size_t>& labels, std::size_t C) {
  if (scores.size() != labels.size()) throw DimensionError("mAP: scores and labels differ in length");
  double total = 0.0;
  std::size_t classes = 0;
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t c = 0; c < C; ++c) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a][c] > scores[b][c]; });
    std::size_t hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (labels[idx[r]] == c) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) continue;
    total += ap / static_cast<double>(hits);
    ++classes;
  }
  return classes == 0 ? 0.0 : total / static_cast<double>(classes);
}

EvalPoint evaluate(const AvgnModel& model, const Dataset& data, std::size_t T_G, std::size_t k) {
  EvalPoint p;
  p.T_G = T_G;
  p.k = k;
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> labels;
  std::size_t correct = 0, hits = 0, scored = 0;
  double recall = 0.0, flops = 0.0;
  for (const auto& v : data.videos) {
    const InferenceResult r = model.infer(v, T_G, k);
    correct += r.predicted == v.label;
    scores.push_back(r.probs);
    labels.push_back(v.label);
    const TruthMetrics m = truth_metrics(r.selected, r.centers, v, model.config().P);
    recall += m.recall;
    hits += m.hits;
    scored += m.scored;
    flops += static_cast<double>(r.ledger.flops());
    if (!(r.ledger == model.predicted_flops(T_G, k, r.lazy_encodes))) p.flops_match = false;
  }
  const double n = static_cast<double>(data.videos.size());
  p.accuracy = static_cast<double>(correct) / n;
  p.mAP = mean_average_precision(scores, labels, model.config().C);
  p.recall = recall / n;
  p.hit_rate = scored == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(scored);
  p.mean_flops = flops / n;
  return p;
}

std::vector<EvalPoint> evaluate_grid(const AvgnModel& model, const Dataset& data,
                                     const std::vector<std::size_t>& tgs,
                                     const std::vector<std::size_t>& ks) {
  std::vector<EvalPoint> out;
  for (auto tg : tgs)
    for (auto k : ks) out.push_back(evaluate(model, data, tg, k));
  return out;
}

void save_model(const std::filesystem::path& path, const AvgnModel& model) {
  Checkpoint c = model.params().to_checkpoint();
  c.meta["config"] = model.config();
  save_checkpoint(path, c);
}

std::unique_ptr<AvgnModel> load_model(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path);
  if (!c.meta.contains("config")) throw ArgumentError("checkpoint carries no model config");
  ModelConfig cfg;
  from_json(c.meta.at("config"), cfg);
  auto model = std::make_unique<AvgnModel>(cfg);
  model->params().load(c);
  return model;
}

void write_grid_csv(std::ostream& os, const std::vector<EvalPoint>& grid) {
  os << "T_G,k,accuracy,mAP,recall_at_k,center_hit_rate,gflops_per_video,flops_match\n";
  for (const auto& g : grid) {
    os << g.T_G << ',' << g.k << ',' << g.accuracy << ',' << g.mAP << ',' << g.recall << ','
       << g.hit_rate << ',' << g.mean_flops * 1e-9 << ',' << (g.flops_match ? 1 : 0) << '\n';
  }
}

}  // namespace avgn
