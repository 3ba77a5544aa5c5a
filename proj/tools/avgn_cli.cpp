#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "avgn/model/driver.hpp"
#include "avgn/model/gradsuite.hpp"
#include "avgn/numeric/errors.hpp"

namespace fs = std::filesystem;
using namespace avgn;

namespace {

// A directory written by `synth` has train/ and test/; anything else is
// taken to be a single split.
Dataset load_split(const fs::path& dir, const char* split) {
  if (fs::exists(dir / split / "manifest.json")) return load_dataset(dir / split);
  return load_dataset(dir);
}

int cmd_synth(std::uint64_t seed, std::size_t videos, std::size_t classes, const fs::path& out) {
  SynthParams p;
  p.seed = seed;
  p.n_videos = videos;
  p.C = classes;
  p.validate();
  auto [train, test] = split_dataset(generate(p), 0.8);
  save_dataset(out / "train", train);
  save_dataset(out / "test", test);
  std::cout << "wrote " << train.videos.size() << " train and " << test.videos.size()
            << " test videos to " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const fs::path& data, const fs::path& out) {
  const ModelConfig cfg = load_config(config);
  const Dataset d = load_split(data, "train");
  if (d.params.C != cfg.C || d.params.T != cfg.T)
    throw ConfigError("dataset geometry does not match the config (C or T)");
  fs::create_directories(out);
  AvgnModel model(cfg);
  std::ofstream log(out / "train.jsonl");
  auto epochs = train(model, d, &log);
  save_model(out / "model.ckpt", model);
  std::cout << "trained " << epochs.size() << " epochs, final mean loss "
            << epochs.back().mean_losses.total << ", checkpoint "
            << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, std::size_t tg, std::size_t k, bool grid) {
  auto model = load_model(ckpt);
  const Dataset d = load_split(data, "test");
  std::vector<EvalPoint> points;
  if (grid) {
    const std::size_t T = model->config().T;
    std::vector<std::size_t> tgs, ks;
    for (std::size_t v = 1; v <= T; v *= 2) ks.push_back(v);
    for (std::size_t v = 4; v <= T; v *= 2) tgs.push_back(v);
    points = evaluate_grid(*model, d, tgs, ks);
  } else {
    points.push_back(evaluate(*model, d, tg, k));
  }
  write_grid_csv(std::cout, points);
  for (const auto& p : points) {
    if (!p.flops_match) {
      std::cerr << "measured FLOPs differ from the analytic count at T_G=" << p.T_G << " k=" << p.k << "\n";
      return 1;
    }
  }
  return 0;
}

int cmd_gradcheck(const std::string& module, double tol, std::size_t seeds) {
  std::vector<std::string> modules;
  if (module.empty()) {
    modules = gradcheck_modules();
  } else {
    modules.push_back(module);
  }
  bool ok = true;
  for (const auto& m : modules) {
    GradSuiteResult r = run_gradcheck(m, seeds, tol);
    std::cout << std::left << std::setw(16) << m << (r.ok() ? "ok  " : "FAIL") << "  " << r.passed << "/"
              << r.seeds << "  worst " << std::scientific << std::setprecision(2) << r.worst << " (tol "
              << r.tol << ", seed " << r.worst_seed << ", " << r.worst_input << ")" << std::defaultfloat
              << "\n";
    ok = ok && r.ok();
  }
  return ok ? 0 : 1;
}

int cmd_flops(const std::string& config, std::size_t tg, std::size_t k) {
  ModelConfig cfg = load_config(config);
  AvgnModel model(cfg);
  // lazy encodes are data dependent; report the no-lazy and worst cases
  const std::size_t worst_lazy = std::min(k, cfg.T - tg);
  for (std::size_t lazy : {std::size_t{0}, worst_lazy}) {
    FlopsLedger l = model.predicted_flops(tg, k, lazy);
    std::cout << "lazy=" << lazy;
    for (const auto& [stage, macs] : l.stages()) std::cout << " " << stage << "=" << 2 * macs;
    std::cout << " total_gflops=" << static_cast<double>(l.flops()) / 1e9 << "\n";
    if (worst_lazy == 0) break;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual glance network: synthetic data, training, evaluation and checks"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t videos = 500, classes = 4;
  std::string out, config, data, ckpt, module;
  std::size_t tg = 12, k = 14, seeds = 50;
  bool grid = false;
  double tol = 0.0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset split 80/20");
  synth->add_option("--seed", seed);
  synth->add_option("--videos", videos);
  synth->add_option("--classes", classes);
  synth->add_option("--out", out)->required();

  auto* tr = app.add_subcommand("train", "train a model, writing JSON lines per epoch");
  tr->add_option("--config", config)->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, CSV on stdout");
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--tg", tg);
  ev->add_option("--k", k);
  ev->add_flag("--grid", grid, "sweep T_G and k instead of a single point");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable module");
  gc->add_option("--module", module)->check(CLI::IsMember(gradcheck_modules()));
  gc->add_option("--tol", tol, "relative tolerance (default per module)");
  gc->add_option("--seeds", seeds);

  auto* fl = app.add_subcommand("flops", "analytic per-video FLOPs for a budget");
  fl->add_option("--config", config)->required()->check(CLI::ExistingFile);
  fl->add_option("--tg", tg)->required();
  fl->add_option("--k", k)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (synth->parsed()) return cmd_synth(seed, videos, classes, out);
    if (tr->parsed()) return cmd_train(config, data, out);
    if (ev->parsed()) return cmd_eval(ckpt, data, tg, k, grid);
    if (gc->parsed()) return cmd_gradcheck(module, tol, seeds);
    if (fl->parsed()) return cmd_flops(config, tg, k);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
