#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lchd/continual.hpp"
#include "lchd/detector.hpp"
#include "lchd/early_exit.hpp"
#include "lchd/encoder.hpp"
#include "lchd/evalbench.hpp"

namespace lchd {

// Everything a pipeline run can configure, with working defaults for the
// reference toy scale. Parsing is strict: unknown keys are rejected so a
// typo cannot silently fall back to a default.
struct RunConfig {
  EncoderConfig model;

  struct Pretrain {
    int epochs = 1;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double warmup_ratio = 0.1;
    double p_mask = 0.30;
  } pretrain;

  struct Fisher {
    int n_batches = 50;
    int batch_size = 8;
    double p_mask = 0.30;
  } fisher;

  struct Extend {
    int epochs = 1;
    int batch_size = 8;
    double learning_rate = 1e-5;
    double warmup_ratio = 0.1;
    double p_mask = 0.30;
    double p_ra = 0.10;
    int num_anchors = 4;
    int min_distance = 256;
    double lambda = 1000.0;
    std::string mask_mode = "retrieval_aware";  // or "standard"
  } extend;

  struct Detector {
    int epochs = 6;
    int batch_size = 32;
    double learning_rate = 1e-5;
    std::string loss = "ce";  // ce | weighted | focal
    double weight0 = 1.0;
    double weight1 = 1.0;
    double gamma = 0.0;
  } detector;

  struct Adapters {
    int epochs = 6;
    int batch_size = 8;
    double learning_rate = 2e-4;
    double temperature = 2.0;
    double ce_weight = 0.5;
    double kl_weight = 0.5;
    int bottleneck = 32;
    std::vector<int> exit_layers;  // empty -> derive from the depth presets
  } adapters;

  struct Probes {
    int count = 288;
    int length = 2048;
    std::vector<int> distance_buckets = {64, 128, 256, 512, 1024, 1536};
  } probes;

  SyntheticDocParams benchmark;

  struct Corpus {
    int pretrain_docs = 2048;
    int extend_docs = 384;
    int min_len = 1024;
    int max_len = 2044;
    double echo_fraction = 0.5;
  } corpus;

  struct Latency {
    std::vector<int> seq_lens = {128, 512, 2048};
    std::vector<int> batch_sizes = {1, 4};
    std::vector<int> exit_layers = {3, 0};  // 0 is the full-depth head
    int repetitions = 5;
  } latency;

  int truncation_window = 512;
};

RunConfig run_config_from_json(const nlohmann::ordered_json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::ordered_json run_config_to_json(const RunConfig& rc);

MlmTrainConfig pretrain_train_config(const RunConfig& rc, std::uint64_t seed);
MlmTrainConfig extend_train_config(const RunConfig& rc, std::uint64_t seed);
DetectorTrainConfig detector_train_config(const RunConfig& rc, std::uint64_t seed);
DistillConfig adapter_train_config(const RunConfig& rc, std::uint64_t seed);

}  // namespace lchd
