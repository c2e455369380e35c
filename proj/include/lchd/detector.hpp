#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "lchd/encoder.hpp"
#include "lchd/tensor.hpp"

namespace lchd {

// Sentinel marking positions that carry no supervision signal.
inline constexpr int kIgnoreLabel = -100;

struct VerificationSample {
  std::vector<int> context_tokens;
  std::vector<int> query_tokens;
  std::vector<int> response_tokens;
  std::vector<int> gold_labels;  // one 0/1 flag per response token
};

// [CLS] context [SEP] query [SEP] response, with per-token loss labels.
// Everything before the response carries the ignore sentinel; supervision is
// response-only by construction.
struct AssembledInput {
  std::vector<int> tokens;
  std::vector<int> loss_labels;
  int response_offset = 0;

  int response_length() const {
    return static_cast<int>(tokens.size()) - response_offset;
  }
};

AssembledInput assemble_input(const VerificationSample& s, int max_len);

enum class DetectionLossKind { kCrossEntropy, kWeighted, kFocal };

struct DetectionLossConfig {
  DetectionLossKind kind = DetectionLossKind::kCrossEntropy;
  double weight0 = 1.0;  // class weights for the weighted variant
  double weight1 = 1.0;
  double gamma = 0.0;    // focusing exponent for the focal variant
};

// Token-level 2-class loss over the supervised (response, non-sentinel)
// positions, averaged. Positions outside the response never contribute, no
// matter what their raw label slots contain. Throws when no position is
// supervised.
double detection_loss(const Mat& logits, const AssembledInput& in,
                      const DetectionLossConfig& lc, Mat* d_logits = nullptr);

struct DetectorTrainConfig {
  double learning_rate = 1e-5;
  int epochs = 6;
  int batch_size = 32;
  DetectionLossConfig loss;
  std::uint64_t seed = 0;
};

struct DetectorTrainStats {
  int steps = 0;
  int samples_seen = 0;
  int rejected_overlong = 0;
  std::vector<double> epoch_losses;
  DetectorTrainConfig config_echo;
};

// Fine-tunes the whole model (backbone + token head) on verification
// samples. Samples whose assembled form exceeds the model window are counted
// and skipped. Creates the token head when absent.
DetectorTrainStats train_detector(ParamStore& model, const EncoderConfig& cfg,
                                  const std::vector<VerificationSample>& samples,
                                  const DetectorTrainConfig& tc);

// Maximal runs of 1s as half-open [start, end) index pairs.
std::vector<std::pair<int, int>> spans_from_binary(const std::vector<int>& binary);
std::vector<int> binary_from_spans(const std::vector<std::pair<int, int>>& spans, int len);

struct PredictResult {
  std::vector<Scalar> probs;  // per response token, class-1 probability
  std::vector<int> binary;    // probs > 0.5
  std::vector<std::pair<int, int>> spans;
  bool example_flag = false;  // any span present
};

// Runs the verifier on one sample. exit_layer selects an early exit whose
// adapter must exist; empty or full depth uses the final head.
PredictResult predict(const ParamStore& model, const EncoderConfig& cfg,
                      const VerificationSample& s, std::optional<int> exit_layer = {});

struct DetectionMetrics {
  double token_precision = 0.0;
  double token_recall = 0.0;
  double token_f1 = 0.0;
  double example_precision = 0.0;
  double example_recall = 0.0;
  double example_f1 = 0.0;
  double hallucination_recall = 0.0;  // pooled class-1 recall
  double span_f1 = 0.0;               // exact span match, auxiliary
  std::int64_t token_tp = 0, token_fp = 0, token_fn = 0;
};

// Micro-averaged scores: counts pooled over every token of every sample.
DetectionMetrics compute_metrics(const std::vector<PredictResult>& preds,
                                 const std::vector<VerificationSample>& samples);

}  // namespace lchd
