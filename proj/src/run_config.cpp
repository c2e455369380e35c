#include "lchd/run_config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace lchd {

namespace {

using ordered_json = nlohmann::ordered_json;

// Pulls known keys out of a section and rejects anything left over.
class SectionReader {
 public:
  SectionReader(const ordered_json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object())
      throw std::invalid_argument("config section " + name_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& into) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      into = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config key " + name_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw std::invalid_argument("unknown config key " + name_ + "." + key);
  }

 private:
  const ordered_json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig run_config_from_json(const ordered_json& j) {
  if (!j.is_object()) throw std::invalid_argument("config root must be an object");
  RunConfig rc;
  std::set<std::string> sections;

  auto section = [&](const char* name) -> const ordered_json* {
    sections.insert(name);
    auto it = j.find(name);
    return it == j.end() ? nullptr : &*it;
  };

  if (const auto* s = section("model")) {
    SectionReader r(*s, "model");
    r.read("num_layers", rc.model.num_layers);
    r.read("d_model", rc.model.d_model);
    r.read("num_heads", rc.model.num_heads);
    r.read("d_ffn", rc.model.d_ffn);
    r.read("vocab_size", rc.model.vocab_size);
    double ln_eps = rc.model.ln_eps;
    r.read("ln_eps", ln_eps);
    rc.model.ln_eps = static_cast<Scalar>(ln_eps);
    r.read("orig_max_len", rc.model.rope.orig_max_len);
    double theta = rc.model.rope.theta_base, scale = rc.model.rope.scale_s;
    double rlo = rc.model.rope.ramp_low, rhi = rc.model.rope.ramp_high;
    r.read("theta_base", theta);
    r.read("scale_s", scale);
    r.read("ramp_low", rlo);
    r.read("ramp_high", rhi);
    rc.model.rope.theta_base = static_cast<Scalar>(theta);
    rc.model.rope.scale_s = static_cast<Scalar>(scale);
    rc.model.rope.ramp_low = static_cast<Scalar>(rlo);
    rc.model.rope.ramp_high = static_cast<Scalar>(rhi);
    r.finish();
  }
  rc.model.rope.head_dim = rc.model.d_model / std::max(1, rc.model.num_heads);

  if (const auto* s = section("pretrain")) {
    SectionReader r(*s, "pretrain");
    r.read("epochs", rc.pretrain.epochs);
    r.read("batch_size", rc.pretrain.batch_size);
    r.read("learning_rate", rc.pretrain.learning_rate);
    r.read("warmup_ratio", rc.pretrain.warmup_ratio);
    r.read("p_mask", rc.pretrain.p_mask);
    r.finish();
  }
  if (const auto* s = section("fisher")) {
    SectionReader r(*s, "fisher");
    r.read("n_batches", rc.fisher.n_batches);
    r.read("batch_size", rc.fisher.batch_size);
    r.read("p_mask", rc.fisher.p_mask);
    r.finish();
  }
  if (const auto* s = section("extend")) {
    SectionReader r(*s, "extend");
    r.read("epochs", rc.extend.epochs);
    r.read("batch_size", rc.extend.batch_size);
    r.read("learning_rate", rc.extend.learning_rate);
    r.read("warmup_ratio", rc.extend.warmup_ratio);
    r.read("p_mask", rc.extend.p_mask);
    r.read("p_ra", rc.extend.p_ra);
    r.read("num_anchors", rc.extend.num_anchors);
    r.read("min_distance", rc.extend.min_distance);
    r.read("lambda", rc.extend.lambda);
    r.read("mask_mode", rc.extend.mask_mode);
    r.finish();
    if (rc.extend.mask_mode != "retrieval_aware" && rc.extend.mask_mode != "standard")
      throw std::invalid_argument("extend.mask_mode must be retrieval_aware or standard");
  }
  if (const auto* s = section("detector")) {
    SectionReader r(*s, "detector");
    r.read("epochs", rc.detector.epochs);
    r.read("batch_size", rc.detector.batch_size);
    r.read("learning_rate", rc.detector.learning_rate);
    r.read("loss", rc.detector.loss);
    r.read("weight0", rc.detector.weight0);
    r.read("weight1", rc.detector.weight1);
    r.read("gamma", rc.detector.gamma);
    r.finish();
    if (rc.detector.loss != "ce" && rc.detector.loss != "weighted" && rc.detector.loss != "focal")
      throw std::invalid_argument("detector.loss must be ce, weighted or focal");
  }
  if (const auto* s = section("adapters")) {
    SectionReader r(*s, "adapters");
    r.read("epochs", rc.adapters.epochs);
    r.read("batch_size", rc.adapters.batch_size);
    r.read("learning_rate", rc.adapters.learning_rate);
    r.read("temperature", rc.adapters.temperature);
    r.read("ce_weight", rc.adapters.ce_weight);
    r.read("kl_weight", rc.adapters.kl_weight);
    r.read("bottleneck", rc.adapters.bottleneck);
    r.read("exit_layers", rc.adapters.exit_layers);
    r.finish();
  }
  if (const auto* s = section("probes")) {
    SectionReader r(*s, "probes");
    r.read("count", rc.probes.count);
    r.read("length", rc.probes.length);
    r.read("distance_buckets", rc.probes.distance_buckets);
    r.finish();
  }
  if (const auto* s = section("benchmark")) {
    SectionReader r(*s, "benchmark");
    r.read("n_docs", rc.benchmark.n_docs);
    r.read("min_len", rc.benchmark.min_len);
    r.read("max_len", rc.benchmark.max_len);
    r.read("halluc_rate", rc.benchmark.halluc_rate);
    r.read("fact_density", rc.benchmark.fact_density);
    r.read("n_restate", rc.benchmark.n_restate);
    r.read("perturb_prob", rc.benchmark.perturb_prob);
    std::string depth = "uniform";
    r.read("depth", depth);
    r.finish();
    if (depth == "uniform") rc.benchmark.depth = DepthDist::kUniform;
    else if (depth == "front") rc.benchmark.depth = DepthDist::kFront;
    else if (depth == "back") rc.benchmark.depth = DepthDist::kBack;
    else throw std::invalid_argument("benchmark.depth must be uniform, front or back");
  }
  if (const auto* s = section("corpus")) {
    SectionReader r(*s, "corpus");
    r.read("pretrain_docs", rc.corpus.pretrain_docs);
    r.read("extend_docs", rc.corpus.extend_docs);
    r.read("min_len", rc.corpus.min_len);
    r.read("max_len", rc.corpus.max_len);
    r.read("echo_fraction", rc.corpus.echo_fraction);
    r.finish();
  }
  if (const auto* s = section("latency")) {
    SectionReader r(*s, "latency");
    r.read("seq_lens", rc.latency.seq_lens);
    r.read("batch_sizes", rc.latency.batch_sizes);
    r.read("exit_layers", rc.latency.exit_layers);
    r.read("repetitions", rc.latency.repetitions);
    r.finish();
  }
  if (const auto* s = section("truncation")) {
    SectionReader r(*s, "truncation");
    r.read("window", rc.truncation_window);
    r.finish();
  }

  for (const auto& [key, value] : j.items())
    if (!sections.count(key)) throw std::invalid_argument("unknown config section " + key);
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  ordered_json j = ordered_json::parse(in, nullptr, true);
  return run_config_from_json(j);
}

nlohmann::ordered_json run_config_to_json(const RunConfig& rc) {
  ordered_json j;
  j["model"] = {{"num_layers", rc.model.num_layers},
                {"d_model", rc.model.d_model},
                {"num_heads", rc.model.num_heads},
                {"d_ffn", rc.model.d_ffn},
                {"vocab_size", rc.model.vocab_size},
                {"ln_eps", static_cast<double>(rc.model.ln_eps)},
                {"orig_max_len", rc.model.rope.orig_max_len},
                {"theta_base", static_cast<double>(rc.model.rope.theta_base)},
                {"scale_s", static_cast<double>(rc.model.rope.scale_s)},
                {"ramp_low", static_cast<double>(rc.model.rope.ramp_low)},
                {"ramp_high", static_cast<double>(rc.model.rope.ramp_high)}};
  j["pretrain"] = {{"epochs", rc.pretrain.epochs},
                   {"batch_size", rc.pretrain.batch_size},
                   {"learning_rate", rc.pretrain.learning_rate},
                   {"warmup_ratio", rc.pretrain.warmup_ratio},
                   {"p_mask", rc.pretrain.p_mask}};
  j["fisher"] = {{"n_batches", rc.fisher.n_batches},
                 {"batch_size", rc.fisher.batch_size},
                 {"p_mask", rc.fisher.p_mask}};
  j["extend"] = {{"epochs", rc.extend.epochs},
                 {"batch_size", rc.extend.batch_size},
                 {"learning_rate", rc.extend.learning_rate},
                 {"warmup_ratio", rc.extend.warmup_ratio},
                 {"p_mask", rc.extend.p_mask},
                 {"p_ra", rc.extend.p_ra},
                 {"num_anchors", rc.extend.num_anchors},
                 {"min_distance", rc.extend.min_distance},
                 {"lambda", rc.extend.lambda},
                 {"mask_mode", rc.extend.mask_mode}};
  j["detector"] = {{"epochs", rc.detector.epochs},
                   {"batch_size", rc.detector.batch_size},
                   {"learning_rate", rc.detector.learning_rate},
                   {"loss", rc.detector.loss},
                   {"weight0", rc.detector.weight0},
                   {"weight1", rc.detector.weight1},
                   {"gamma", rc.detector.gamma}};
  j["adapters"] = {{"epochs", rc.adapters.epochs},
                   {"batch_size", rc.adapters.batch_size},
                   {"learning_rate", rc.adapters.learning_rate},
                   {"temperature", rc.adapters.temperature},
                   {"ce_weight", rc.adapters.ce_weight},
                   {"kl_weight", rc.adapters.kl_weight},
                   {"bottleneck", rc.adapters.bottleneck},
                   {"exit_layers", rc.adapters.exit_layers}};
  j["probes"] = {{"count", rc.probes.count},
                 {"length", rc.probes.length},
                 {"distance_buckets", rc.probes.distance_buckets}};
  const char* depth = rc.benchmark.depth == DepthDist::kFront   ? "front"
                      : rc.benchmark.depth == DepthDist::kBack ? "back"
                                                               : "uniform";
  j["benchmark"] = {{"n_docs", rc.benchmark.n_docs},
                    {"min_len", rc.benchmark.min_len},
                    {"max_len", rc.benchmark.max_len},
                    {"halluc_rate", rc.benchmark.halluc_rate},
                    {"fact_density", rc.benchmark.fact_density},
                    {"n_restate", rc.benchmark.n_restate},
                    {"perturb_prob", rc.benchmark.perturb_prob},
                    {"depth", depth}};
  j["corpus"] = {{"pretrain_docs", rc.corpus.pretrain_docs},
                 {"extend_docs", rc.corpus.extend_docs},
                 {"min_len", rc.corpus.min_len},
                 {"max_len", rc.corpus.max_len},
                 {"echo_fraction", rc.corpus.echo_fraction}};
  j["latency"] = {{"seq_lens", rc.latency.seq_lens},
                  {"batch_sizes", rc.latency.batch_sizes},
                  {"exit_layers", rc.latency.exit_layers},
                  {"repetitions", rc.latency.repetitions}};
  j["truncation"] = {{"window", rc.truncation_window}};
  return j;
}

MlmTrainConfig pretrain_train_config(const RunConfig& rc, std::uint64_t seed) {
  MlmTrainConfig tc;
  tc.learning_rate = rc.pretrain.learning_rate;
  tc.warmup_ratio = rc.pretrain.warmup_ratio;
  tc.epochs = rc.pretrain.epochs;
  tc.batch_size = rc.pretrain.batch_size;
  tc.mask_mode = MaskMode::kStandard;
  tc.p_mask = rc.pretrain.p_mask;
  tc.lambda = 0.0;
  tc.seed = seed;
  return tc;
}

MlmTrainConfig extend_train_config(const RunConfig& rc, std::uint64_t seed) {
  MlmTrainConfig tc;
  tc.learning_rate = rc.extend.learning_rate;
  tc.warmup_ratio = rc.extend.warmup_ratio;
  tc.epochs = rc.extend.epochs;
  tc.batch_size = rc.extend.batch_size;
  tc.mask_mode =
      rc.extend.mask_mode == "standard" ? MaskMode::kStandard : MaskMode::kRetrievalAware;
  tc.p_mask = rc.extend.p_mask;
  tc.ra.p_mlm = rc.extend.p_mask;
  tc.ra.p_ra = rc.extend.p_ra;
  tc.ra.num_anchors = rc.extend.num_anchors;
  tc.ra.min_distance = rc.extend.min_distance;
  tc.lambda = rc.extend.lambda;
  tc.seed = seed;
  return tc;
}

DetectorTrainConfig detector_train_config(const RunConfig& rc, std::uint64_t seed) {
  DetectorTrainConfig tc;
  tc.learning_rate = rc.detector.learning_rate;
  tc.epochs = rc.detector.epochs;
  tc.batch_size = rc.detector.batch_size;
  tc.loss.kind = rc.detector.loss == "weighted" ? DetectionLossKind::kWeighted
                 : rc.detector.loss == "focal"  ? DetectionLossKind::kFocal
                                                : DetectionLossKind::kCrossEntropy;
  tc.loss.weight0 = rc.detector.weight0;
  tc.loss.weight1 = rc.detector.weight1;
  tc.loss.gamma = rc.detector.gamma;
  tc.seed = seed;
  return tc;
}

DistillConfig adapter_train_config(const RunConfig& rc, std::uint64_t seed) {
  DistillConfig dc;
  dc.temperature = rc.adapters.temperature;
  dc.ce_weight = rc.adapters.ce_weight;
  dc.kl_weight = rc.adapters.kl_weight;
  dc.learning_rate = rc.adapters.learning_rate;
  dc.epochs = rc.adapters.epochs;
  dc.batch_size = rc.adapters.batch_size;
  dc.seed = seed;
  return dc;
}

}  // namespace lchd
