#include "lchd/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lchd/checkpoint.hpp"
#include "lchd/records.hpp"
#include "lchd/rng.hpp"

namespace lchd {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void require_stage(const CheckpointHeader& h, Stage expected, const char* command, bool force) {
  if (h.stage == expected || force) return;
  throw std::runtime_error(std::string(command) + ": expects a " + to_string(expected) +
                           " checkpoint, found " + to_string(h.stage) +
                           " (pass --force to override)");
}

ordered_json metrics_json(const DetectionMetrics& m) {
  ordered_json j;
  j["token_precision"] = m.token_precision;
  j["token_recall"] = m.token_recall;
  j["token_f1"] = m.token_f1;
  j["example_precision"] = m.example_precision;
  j["example_recall"] = m.example_recall;
  j["example_f1"] = m.example_f1;
  j["hallucination_recall"] = m.hallucination_recall;
  j["span_f1"] = m.span_f1;
  j["token_tp"] = m.token_tp;
  j["token_fp"] = m.token_fp;
  j["token_fn"] = m.token_fn;
  return j;
}

ordered_json finish_manifest(const std::string& command, std::uint64_t seed, const RunConfig& rc,
                             const std::vector<std::pair<std::string, std::string>>& inputs,
                             const std::vector<std::string>& outputs, ordered_json metrics,
                             const std::string& manifest_path) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = run_config_to_json(rc);
  ordered_json in_j;
  for (const auto& [path, hash] : inputs) in_j[fs::path(path).filename().string()] = hash;
  m["inputs"] = in_j;
  ordered_json out_j;
  for (const auto& path : outputs) out_j[fs::path(path).filename().string()] = fnv1a_file_hex(path);
  m["outputs"] = out_j;
  m["metrics"] = std::move(metrics);
  std::ofstream f(manifest_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest " + manifest_path);
  f << m.dump(2) << "\n";
  return m;
}

std::pair<std::string, std::string> hashed(const std::string& path) {
  return {path, fnv1a_file_hex(path)};
}

double tail_mean_loss(const TrainingLog& log) {
  if (log.steps.empty()) return 0.0;
  std::size_t k = std::min<std::size_t>(8, log.steps.size());
  double s = 0.0;
  for (std::size_t i = log.steps.size() - k; i < log.steps.size(); ++i)
    s += log.steps[i].mlm_loss;
  return s / k;
}

}  // namespace

int profile_exit_layer(const std::string& profile, int num_layers) {
  ExitProfile p = select_exits(num_layers);
  if (profile == "fast") return p.fast;
  if (profile == "balanced") return p.balanced;
  if (profile == "max") return p.high_accuracy;
  throw std::invalid_argument("unknown profile " + profile + " (fast, balanced, max)");
}

ordered_json run_gen_data(const RunConfig& rc, const std::string& out_dir, std::uint64_t seed) {
  fs::create_directories(out_dir);
  const int orig = rc.model.rope.orig_max_len;
  const int extended = rc.model.max_len();

  CorpusParams pre;
  pre.num_docs = rc.corpus.pretrain_docs;
  pre.min_len = orig / 2;
  pre.max_len = orig;
  pre.echo_fraction = rc.corpus.echo_fraction;
  auto pre_corpus = gen_corpus(pre, mix_seed(seed, 1));

  CorpusParams ext;
  ext.num_docs = rc.corpus.extend_docs;
  ext.min_len = std::min(rc.corpus.min_len, extended);
  ext.max_len = std::min(rc.corpus.max_len, extended);
  ext.echo_fraction = rc.corpus.echo_fraction;
  auto ext_corpus = gen_corpus(ext, mix_seed(seed, 2));

  GeneratedBenchmark train_bench = gen_halluc_benchmark(rc.benchmark, mix_seed(seed, 3));
  GeneratedBenchmark eval_bench = gen_halluc_benchmark(rc.benchmark, mix_seed(seed, 4));
  auto probes = gen_retrieval_probes(rc.probes.count, std::min(rc.probes.length, extended),
                                     rc.probes.distance_buckets, mix_seed(seed, 5));

  std::string p1 = (fs::path(out_dir) / "corpus_pretrain.jsonl").string();
  std::string p2 = (fs::path(out_dir) / "corpus_extend.jsonl").string();
  std::string p3 = (fs::path(out_dir) / "samples_train.jsonl").string();
  std::string p4 = (fs::path(out_dir) / "samples_eval.jsonl").string();
  std::string p5 = (fs::path(out_dir) / "probes.jsonl").string();
  save_corpus_jsonl(p1, pre_corpus);
  save_corpus_jsonl(p2, ext_corpus);
  save_benchmark_jsonl(p3, train_bench);
  save_benchmark_jsonl(p4, eval_bench);
  save_probes_jsonl(p5, probes);

  ordered_json metrics;
  metrics["pretrain_docs"] = pre_corpus.size();
  metrics["extend_docs"] = ext_corpus.size();
  metrics["train_samples"] = train_bench.docs.size();
  metrics["eval_samples"] = eval_bench.docs.size();
  metrics["probes"] = probes.size();
  metrics["train_flagged_fraction"] = train_bench.flagged_fraction;
  metrics["train_token_positive_rate"] = train_bench.token_positive_rate;
  metrics["eval_flagged_fraction"] = eval_bench.flagged_fraction;

  return finish_manifest("gen-data", seed, rc, {}, {p1, p2, p3, p4, p5}, metrics,
                         (fs::path(out_dir) / "gen_data.manifest.json").string());
}

ordered_json run_pretrain(const RunConfig& rc, const std::string& corpus_path,
                          const std::string& out_ckpt, std::uint64_t seed) {
  auto corpus = load_corpus(corpus_path);
  EncoderConfig cfg = rc.model;
  cfg.rope.scale_s = 1.0f;  // pretraining runs inside the original window
  cfg.validate();
  ParamStore model = init_encoder(cfg, seed);
  TrainingLog log = train_mlm(model, cfg, corpus, pretrain_train_config(rc, seed), nullptr);

  CheckpointHeader h;
  h.config = cfg;
  h.stage = Stage::kPretrained;
  h.seed_lineage = {{"pretrain", seed}};
  save_checkpoint(out_ckpt, h, model);
  save_training_log_jsonl(out_ckpt + ".log.jsonl", log);

  ordered_json metrics;
  metrics["steps"] = log.steps.size();
  metrics["final_mlm_loss"] = tail_mean_loss(log);
  return finish_manifest("pretrain", seed, rc, {hashed(corpus_path)},
                         {out_ckpt, out_ckpt + ".log.jsonl"}, metrics,
                         out_ckpt + ".manifest.json");
}

ordered_json run_fisher(const RunConfig& rc, const std::string& ckpt_path,
                        const std::string& corpus_path, const std::string& out_path,
                        std::uint64_t seed, bool force) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  require_stage(lc.header, Stage::kPretrained, "fisher", force);
  auto corpus = load_corpus(corpus_path);
  for (auto& doc : corpus)
    if (static_cast<int>(doc.size()) > lc.header.config.max_len())
      doc.resize(lc.header.config.max_len());

  ParamStore fisher = estimate_fisher(lc.params, lc.header.config, corpus, rc.fisher.n_batches,
                                      rc.fisher.batch_size, rc.fisher.p_mask, seed);

  ParamStore bundle;
  for (const auto& name : lc.params.names()) {
    const Param& p = lc.params.at(name);
    Param& dst = p.rank() == 1 ? bundle.add_vector("theta_star." + name, p.extents[0])
                               : bundle.add("theta_star." + name, p.extents[0], p.extents[1]);
    dst.value = p.value;
  }
  for (const auto& name : fisher.names()) {
    const Param& p = fisher.at(name);
    Param& dst = p.rank() == 1 ? bundle.add_vector("fisher." + name, p.extents[0])
                               : bundle.add("fisher." + name, p.extents[0], p.extents[1]);
    dst.value = p.value;
  }

  CheckpointHeader h = lc.header;
  h.kind = "ewc_state";
  h.ewc_lambda = rc.extend.lambda;
  h.seed_lineage.push_back({"fisher", seed});
  save_checkpoint(out_path, h, bundle);

  double fisher_sum = 0.0;
  for (const auto& name : fisher.names())
    fisher_sum += static_cast<double>(fisher.at(name).value.sum());
  ordered_json metrics;
  metrics["fisher_l1"] = fisher_sum;
  metrics["n_batches"] = rc.fisher.n_batches;
  return finish_manifest("fisher", seed, rc, {hashed(ckpt_path), hashed(corpus_path)}, {out_path},
                         metrics, out_path + ".manifest.json");
}

namespace {

EwcState load_ewc_state(const std::string& path, double lambda) {
  LoadedCheckpoint lc = load_checkpoint(path);
  if (lc.header.kind != "ewc_state")
    throw std::runtime_error("expected an importance-state file at " + path);
  EwcState ewc;
  ewc.lambda = lambda;
  for (const auto& name : lc.params.names()) {
    const Param& p = lc.params.at(name);
    ParamStore* dst = nullptr;
    std::string inner;
    if (name.rfind("theta_star.", 0) == 0) {
      dst = &ewc.theta_star;
      inner = name.substr(11);
    } else if (name.rfind("fisher.", 0) == 0) {
      dst = &ewc.fisher;
      inner = name.substr(7);
    } else {
      throw std::runtime_error("unexpected tensor " + name + " in importance state");
    }
    Param& q = p.rank() == 1 ? dst->add_vector(inner, p.extents[0])
                             : dst->add(inner, p.extents[0], p.extents[1]);
    q.value = p.value;
  }
  return ewc;
}

}  // namespace

ordered_json run_extend(const RunConfig& rc, const std::string& ckpt_path,
                        const std::string& corpus_path, const std::string& ewc_path,
                        const std::string& out_ckpt, std::uint64_t seed, bool force) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  require_stage(lc.header, Stage::kPretrained, "extend", force);
  if (rc.model.rope.scale_s <= 1.0f)
    throw std::runtime_error("extend: config scale_s must exceed 1");

  EncoderConfig cfg = lc.header.config;
  cfg.rope.scale_s = rc.model.rope.scale_s;
  cfg.rope.ramp_low = rc.model.rope.ramp_low;
  cfg.rope.ramp_high = rc.model.rope.ramp_high;
  cfg.validate();

  auto corpus = load_corpus(corpus_path);
  MlmTrainConfig tc = extend_train_config(rc, seed);

  EwcState ewc;
  const EwcState* ewc_ptr = nullptr;
  std::vector<std::pair<std::string, std::string>> inputs = {hashed(ckpt_path),
                                                             hashed(corpus_path)};
  if (tc.lambda > 0.0) {
    if (ewc_path.empty())
      throw std::runtime_error("extend: lambda > 0 requires an importance state (--ewc)");
    ewc = load_ewc_state(ewc_path, tc.lambda);
    ewc_ptr = &ewc;
    inputs.push_back(hashed(ewc_path));
  }

  TrainingLog log = train_extend(lc.params, cfg, corpus, tc, ewc_ptr);

  CheckpointHeader h = lc.header;
  h.config = cfg;
  h.stage = Stage::kExtended;
  h.ewc_lambda = tc.lambda;
  h.seed_lineage.push_back({"extend", seed});
  save_checkpoint(out_ckpt, h, lc.params);
  save_training_log_jsonl(out_ckpt + ".log.jsonl", log);

  ordered_json metrics;
  metrics["steps"] = log.steps.size();
  metrics["final_mlm_loss"] = tail_mean_loss(log);
  metrics["final_ewc_penalty"] = log.steps.empty() ? 0.0 : log.steps.back().ewc_penalty;
  metrics["mask_mode"] = rc.extend.mask_mode;
  return finish_manifest("extend", seed, rc, inputs, {out_ckpt, out_ckpt + ".log.jsonl"}, metrics,
                         out_ckpt + ".manifest.json");
}

ordered_json run_train_detector(const RunConfig& rc, const std::string& ckpt_path,
                                const std::string& samples_path, const std::string& out_ckpt,
                                std::uint64_t seed, bool force) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  require_stage(lc.header, Stage::kExtended, "train-detector", force);
  auto samples = load_samples_jsonl(samples_path);
  DetectorTrainStats stats =
      train_detector(lc.params, lc.header.config, samples, detector_train_config(rc, seed));

  CheckpointHeader h = lc.header;
  h.stage = Stage::kDetector;
  h.seed_lineage.push_back({"detector", seed});
  save_checkpoint(out_ckpt, h, lc.params);

  ordered_json metrics;
  metrics["steps"] = stats.steps;
  metrics["samples_seen"] = stats.samples_seen;
  metrics["rejected_overlong"] = stats.rejected_overlong;
  metrics["epoch_losses"] = stats.epoch_losses;
  return finish_manifest("train-detector", seed, rc, {hashed(ckpt_path), hashed(samples_path)},
                         {out_ckpt}, metrics, out_ckpt + ".manifest.json");
}

ordered_json run_train_adapters(const RunConfig& rc, const std::string& ckpt_path,
                                const std::string& samples_path, const std::string& out_ckpt,
                                std::uint64_t seed, bool force) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  require_stage(lc.header, Stage::kDetector, "train-adapters", force);
  auto samples = load_samples_jsonl(samples_path);

  std::vector<int> layers = rc.adapters.exit_layers;
  if (layers.empty()) {
    ExitProfile p = select_exits(lc.header.config.num_layers);
    layers = {p.fast, p.balanced, p.high_accuracy};
  }
  std::vector<AdapterConfig> exits;
  for (int l : layers) exits.push_back({l, rc.adapters.bottleneck});

  DistillConfig dc = adapter_train_config(rc, seed);
  AdapterTrainStats stats = train_adapters(lc.params, lc.header.config, samples, exits, dc);

  CheckpointHeader h = lc.header;
  h.stage = Stage::kAdapters;
  h.adapter_layers = layers;
  h.adapter_bottleneck = rc.adapters.bottleneck;
  h.seed_lineage.push_back({"adapters", seed});
  save_checkpoint(out_ckpt, h, lc.params);

  ordered_json metrics;
  metrics["steps"] = stats.steps;
  metrics["backbone_forwards"] = stats.backbone_forwards;
  metrics["rejected_overlong"] = stats.rejected_overlong;
  metrics["epoch_losses"] = stats.epoch_losses;
  metrics["exit_layers"] = layers;
  return finish_manifest("train-adapters", seed, rc, {hashed(ckpt_path), hashed(samples_path)},
                         {out_ckpt}, metrics, out_ckpt + ".manifest.json");
}

ordered_json run_probe(const RunConfig& rc, const std::string& ckpt_path,
                       const std::string& samples_path, const std::string& out_json,
                       std::uint64_t seed) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  auto samples = load_samples_jsonl(samples_path);
  ProbeConfig pc;
  pc.seed = seed;
  auto table = probe_layers(lc.params, lc.header.config, samples, pc);

  ordered_json rows = ordered_json::array();
  for (const auto& r : table) rows.push_back({{"layer", r.layer}, {"token_f1", r.token_f1}});
  std::ofstream f(out_json, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out_json);
  f << rows.dump(2) << "\n";

  ordered_json metrics;
  metrics["layers"] = table.size();
  metrics["best_f1"] = [&] {
    double best = 0.0;
    for (const auto& r : table) best = std::max(best, r.token_f1);
    return best;
  }();
  return finish_manifest("probe", seed, rc, {hashed(ckpt_path), hashed(samples_path)}, {out_json},
                         metrics, out_json + ".manifest.json");
}

ordered_json run_eval_retrieval(const RunConfig& rc, const std::string& ckpt_path,
                                const std::string& probes_path, const std::string& out_json) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  auto probes = load_probes_jsonl(probes_path);
  auto curve = eval_retrieval_curve(lc.params, lc.header.config, probes);

  ordered_json rows = ordered_json::array();
  for (const auto& p : curve)
    rows.push_back({{"distance", p.distance}, {"accuracy", p.accuracy}, {"n", p.n}});
  std::ofstream f(out_json, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out_json);
  f << rows.dump(2) << "\n";

  ordered_json metrics;
  metrics["curve"] = rows;
  return finish_manifest("eval-retrieval", 0, rc, {hashed(ckpt_path), hashed(probes_path)},
                         {out_json}, metrics, out_json + ".manifest.json");
}

ordered_json run_eval_detect(const RunConfig& rc, const std::string& ckpt_path,
                             const std::string& samples_path, const std::string& out_json,
                             std::optional<int> exit_layer) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  auto samples = load_samples_jsonl(samples_path);
  std::vector<PredictResult> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples)
    preds.push_back(predict(lc.params, lc.header.config, s, exit_layer));
  DetectionMetrics m = compute_metrics(preds, samples);

  ordered_json out = metrics_json(m);
  out["exit_layer"] = exit_layer ? *exit_layer : 0;
  std::ofstream f(out_json, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out_json);
  f << out.dump(2) << "\n";
  return finish_manifest("eval-detect", 0, rc, {hashed(ckpt_path), hashed(samples_path)},
                         {out_json}, out, out_json + ".manifest.json");
}

ordered_json run_eval_truncation(const RunConfig& rc, const std::string& ckpt_path,
                                 const std::string& samples_path, int window,
                                 const std::string& out_json) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  auto samples = load_samples_jsonl(samples_path);
  TruncationResult res = truncation_eval(lc.params, lc.header.config, samples, window);

  ordered_json out;
  out["window"] = res.window;
  out["fraction_truncated"] = res.fraction_truncated;
  out["full"] = metrics_json(res.full);
  out["truncated"] = metrics_json(res.truncated);
  out["recall_improvement"] = res.full.hallucination_recall - res.truncated.hallucination_recall;
  std::ofstream f(out_json, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out_json);
  f << out.dump(2) << "\n";
  return finish_manifest("eval-truncation", 0, rc, {hashed(ckpt_path), hashed(samples_path)},
                         {out_json}, out, out_json + ".manifest.json");
}

ordered_json run_bench_latency(const RunConfig& rc, const std::string& ckpt_path,
                               const std::string& out_path, std::uint64_t seed) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_path);
  auto grid = bench_latency(lc.params, lc.header.config, rc.latency.seq_lens,
                            rc.latency.batch_sizes, rc.latency.exit_layers,
                            rc.latency.repetitions, seed);
  save_latency_jsonl(out_path, grid);

  ordered_json metrics;
  metrics["cells"] = grid.size();
  return finish_manifest("bench-latency", seed, rc, {hashed(ckpt_path)}, {out_path}, metrics,
                         out_path + ".manifest.json");
}

}  // namespace lchd
