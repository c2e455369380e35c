#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lchd/pipeline.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 42;
  int exit_layer = -1;  // -1: unset
  std::string profile;
};

lchd::RunConfig effective_config(const GlobalOpts& g) {
  if (g.config_path.empty()) return {};
  return lchd::load_run_config(g.config_path);
}

std::optional<int> resolve_exit(const GlobalOpts& g, const lchd::RunConfig& rc) {
  if (g.exit_layer >= 0 && !g.profile.empty())
    throw CLI::ValidationError("--exit-layer and --profile are mutually exclusive");
  if (g.exit_layer > 0) return g.exit_layer;
  if (g.exit_layer == 0) return std::nullopt;  // full-depth head
  if (!g.profile.empty()) return lchd::profile_exit_layer(g.profile, rc.model.num_layers);
  return std::nullopt;
}

void print_summary(const nlohmann::ordered_json& manifest) {
  std::cout << manifest["command"].get<std::string>() << " done";
  if (manifest.contains("metrics") && !manifest["metrics"].empty())
    std::cout << "  metrics: " << manifest["metrics"].dump();
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-context hallucination detection pipeline"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GlobalOpts g;
  app.add_option("--config", g.config_path, "run configuration (json)");
  app.add_option("--seed", g.seed, "base seed")->capture_default_str();
  app.add_option("--exit-layer", g.exit_layer, "early-exit layer (0 = full depth)");
  app.add_option("--profile", g.profile, "speed profile")
      ->check(CLI::IsMember({"fast", "balanced", "max"}));

  std::string corpus, ckpt, out, samples, probes, ewc, out_dir;
  int window = -1;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "generate corpora, samples and probes");
  gen->add_option("--out-dir", out_dir, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "train the base model inside the original window");
  pre->add_option("--corpus", corpus, "training corpus")->required();
  pre->add_option("--out", out, "output checkpoint")->required();

  auto* fis = app.add_subcommand("fisher", "estimate parameter importance on the frozen model");
  fis->add_option("--ckpt", ckpt, "base checkpoint")->required();
  fis->add_option("--corpus", corpus, "sampling corpus")->required();
  fis->add_option("--out", out, "output importance state")->required();
  fis->add_flag("--force", force, "skip the stage check");

  auto* ext = app.add_subcommand("extend", "extend the context window with drift control");
  ext->add_option("--ckpt", ckpt, "base checkpoint")->required();
  ext->add_option("--corpus", corpus, "long-document corpus")->required();
  ext->add_option("--ewc", ewc, "importance state from the fisher step");
  ext->add_option("--out", out, "output checkpoint")->required();
  ext->add_flag("--force", force, "skip the stage check");

  auto* det = app.add_subcommand("train-detector", "fit the token-level verification head");
  det->add_option("--ckpt", ckpt, "extended checkpoint")->required();
  det->add_option("--samples", samples, "labeled samples (jsonl)")->required();
  det->add_option("--out", out, "output checkpoint")->required();
  det->add_flag("--force", force, "skip the stage check");

  auto* ada = app.add_subcommand("train-adapters", "distill early-exit adapters from the head");
  ada->add_option("--ckpt", ckpt, "detector checkpoint")->required();
  ada->add_option("--samples", samples, "labeled samples (jsonl)")->required();
  ada->add_option("--out", out, "output checkpoint")->required();
  ada->add_flag("--force", force, "skip the stage check");

  auto* prb = app.add_subcommand("probe", "layer-by-layer readiness sweep");
  prb->add_option("--ckpt", ckpt, "checkpoint")->required();
  prb->add_option("--samples", samples, "labeled samples (jsonl)")->required();
  prb->add_option("--out", out, "output table (json)")->required();

  auto* evr = app.add_subcommand("eval-retrieval", "masked-recovery accuracy by distance");
  evr->add_option("--ckpt", ckpt, "checkpoint")->required();
  evr->add_option("--probes", probes, "probe file (jsonl)")->required();
  evr->add_option("--out", out, "output curve (json)")->required();

  auto* evd = app.add_subcommand("eval-detect", "verification metrics on labeled samples");
  evd->add_option("--ckpt", ckpt, "detector or adapter checkpoint")->required();
  evd->add_option("--samples", samples, "labeled samples (jsonl)")->required();
  evd->add_option("--out", out, "output metrics (json)")->required();

  auto* evt = app.add_subcommand("eval-truncation", "full context vs clipped context");
  evt->add_option("--ckpt", ckpt, "detector checkpoint")->required();
  evt->add_option("--samples", samples, "labeled samples (jsonl)")->required();
  evt->add_option("--window", window, "clip length (defaults from config)");
  evt->add_option("--out", out, "output comparison (json)")->required();

  auto* ben = app.add_subcommand("bench-latency", "inference timing grid");
  ben->add_option("--ckpt", ckpt, "checkpoint")->required();
  ben->add_option("--out", out, "output grid (jsonl)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    lchd::RunConfig rc = effective_config(g);
    nlohmann::ordered_json manifest;
    if (gen->parsed()) {
      manifest = lchd::run_gen_data(rc, out_dir, g.seed);
    } else if (pre->parsed()) {
      manifest = lchd::run_pretrain(rc, corpus, out, g.seed);
    } else if (fis->parsed()) {
      manifest = lchd::run_fisher(rc, ckpt, corpus, out, g.seed, force);
    } else if (ext->parsed()) {
      manifest = lchd::run_extend(rc, ckpt, corpus, ewc, out, g.seed, force);
    } else if (det->parsed()) {
      manifest = lchd::run_train_detector(rc, ckpt, samples, out, g.seed, force);
    } else if (ada->parsed()) {
      manifest = lchd::run_train_adapters(rc, ckpt, samples, out, g.seed, force);
    } else if (prb->parsed()) {
      manifest = lchd::run_probe(rc, ckpt, samples, out, g.seed);
    } else if (evr->parsed()) {
      manifest = lchd::run_eval_retrieval(rc, ckpt, probes, out);
    } else if (evd->parsed()) {
      manifest = lchd::run_eval_detect(rc, ckpt, samples, out, resolve_exit(g, rc));
    } else if (evt->parsed()) {
      int w = window > 0 ? window : rc.truncation_window;
      manifest = lchd::run_eval_truncation(rc, ckpt, samples, w, out);
    } else if (ben->parsed()) {
      manifest = lchd::run_bench_latency(rc, ckpt, out, g.seed);
    }
    print_summary(manifest);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
