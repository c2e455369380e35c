#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lchd/detector.hpp"
#include "lchd/encoder.hpp"

namespace lchd {

// ---- training corpora ------------------------------------------------------

// Mixture of two synthetic document families over the byte vocabulary:
// key/value echo streams (associations repeat at short and long range) and
// prose-like fact documents. Both give masked training something to retrieve.
struct CorpusParams {
  int num_docs = 256;
  int min_len = 1024;
  int max_len = 2048;
  double echo_fraction = 0.5;
  double p_new_key = 0.25;       // echo stream: fresh key
  double p_recent_key = 0.60;    // reuse from the recent window
  int recent_window = 16;
};

std::vector<std::vector<int>> gen_corpus(const CorpusParams& params, std::uint64_t seed);

// ---- positional retrieval probes ------------------------------------------

// A probe plants a key/value pair twice in an otherwise probe-free stream:
// once as evidence and once at the target, exactly `distance` apart. Masking
// the target value and asking the model to restore it measures retrieval at
// that distance.
struct RetrievalProbe {
  std::vector<int> sequence;
  int target_position = 0;
  int evidence_position = 0;
  int distance = 0;
};

std::vector<RetrievalProbe> gen_retrieval_probes(int count, int length,
                                                 const std::vector<int>& distance_buckets,
                                                 std::uint64_t seed);

struct RetrievalCurvePoint {
  int distance;
  double accuracy;
  int n;
};

std::vector<RetrievalCurvePoint> eval_retrieval_curve(const ParamStore& model,
                                                      const EncoderConfig& cfg,
                                                      const std::vector<RetrievalProbe>& probes);

// ---- synthetic verification benchmark -------------------------------------

enum class DepthDist { kUniform, kFront, kBack };

struct SyntheticDocParams {
  int n_docs = 200;
  int min_len = 1000;
  int max_len = 1800;
  double halluc_rate = 0.5;
  double fact_density = 0.45;  // chance a sentence slot carries a fact
  int n_restate = 5;           // facts restated by the response
  double perturb_prob = 0.35;  // per restated fact in a flagged doc
  DepthDist depth = DepthDist::kUniform;
};

struct SyntheticDoc {
  VerificationSample sample;
  std::vector<double> evidence_depths;  // fractional position per restated fact
  std::vector<int> perturbed;           // per restated fact
  bool flagged = false;
};

struct GeneratedBenchmark {
  std::vector<SyntheticDoc> docs;
  double flagged_fraction = 0.0;
  double token_positive_rate = 0.0;
  std::array<int, 10> depth_histogram{};
};

GeneratedBenchmark gen_halluc_benchmark(const SyntheticDocParams& params, std::uint64_t seed);

std::vector<VerificationSample> benchmark_samples(const GeneratedBenchmark& bench);

// ---- truncation comparison -------------------------------------------------

struct TruncationResult {
  DetectionMetrics full;
  DetectionMetrics truncated;
  double fraction_truncated = 0.0;
  int window = 0;
};

// Evaluates the same documents twice: once intact, once with every context
// clipped to its first `window` tokens before assembly.
TruncationResult truncation_eval(const ParamStore& model, const EncoderConfig& cfg,
                                 const std::vector<VerificationSample>& docs, int window);

// ---- latency grid ----------------------------------------------------------

struct LatencyRecord {
  int seq_len = 0;
  int batch_size = 0;
  int exit_layer = 0;  // 0 means the full-depth head
  double ms_per_sample = 0.0;
  double samples_per_second = 0.0;
};

// Times verifier inference over the full grid. exit entries of 0 run the
// final head; other entries need a trained adapter at that layer.
std::vector<LatencyRecord> bench_latency(const ParamStore& model, const EncoderConfig& cfg,
                                         const std::vector<int>& seq_lens,
                                         const std::vector<int>& batch_sizes,
                                         const std::vector<int>& exit_layers, int repetitions,
                                         std::uint64_t seed);

}  // namespace lchd
