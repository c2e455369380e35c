#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lchd/detector.hpp"
#include "lchd/encoder.hpp"
#include "lchd/tensor.hpp"

namespace lchd {

// Lightweight exit head reading an intermediate hidden state:
// layer norm -> down projection -> GELU -> up projection to 2 logits.
struct AdapterConfig {
  int exit_layer = 0;
  int bottleneck = 32;
};

// d -> bottleneck -> 2 affine stack: 2d + (d b + b) + (2b + 2) parameters.
std::int64_t adapter_param_count(int d_model, int bottleneck);

// Registers exit.<layer>.* parameters with seeded init; no-op if present.
void add_adapter_params(ParamStore& model, const EncoderConfig& cfg, const AdapterConfig& ac,
                        std::uint64_t seed);

std::vector<int> adapter_layers_present(const ParamStore& model, const EncoderConfig& cfg);

struct AdapterCache {
  LayerNormCache ln;
  Mat normed;
  Mat pre;  // bottleneck pre-activation
  Mat act;
};

Mat adapter_forward(const Mat& h, const ParamStore& model, const EncoderConfig& cfg,
                    int exit_layer, AdapterCache* cache = nullptr, FlopCounter* flops = nullptr);

// Accumulates adapter parameter gradients only; the backbone below the exit
// stays untouched, which is what keeps adapter training cheap.
void adapter_backward(const Mat& d_logits, const AdapterCache& cache, ParamStore& model,
                      int exit_layer);

struct DistillConfig {
  double temperature = 2.0;
  double ce_weight = 0.5;
  double kl_weight = 0.5;
  double learning_rate = 2e-4;
  int epochs = 6;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct DistillParts {
  double ce = 0.0;
  double kl = 0.0;         // raw divergence, teacher vs student at temperature
  double kl_scaled = 0.0;  // temperature-squared scaled term entering the loss
};

// ce_weight * CE(student, labels) + kl_weight * T^2 * KL(teacher_T || student_T),
// each averaged over the supervised positions of `in`. d_student receives the
// gradient; teacher logits are treated as constants.
double distill_loss(const Mat& student_logits, const Mat& teacher_logits,
                    const AssembledInput& in, const DistillConfig& dc,
                    Mat* d_student = nullptr, DistillParts* parts = nullptr);

struct AdapterTrainStats {
  int steps = 0;
  int backbone_forwards = 0;  // exactly one full pass per sample visit
  int rejected_overlong = 0;
  std::vector<double> epoch_losses;
};

// Trains every listed exit jointly against the frozen full-depth head. One
// backbone forward per sample serves all exits; only adapter parameters
// receive updates.
AdapterTrainStats train_adapters(ParamStore& model, const EncoderConfig& cfg,
                                 const std::vector<VerificationSample>& samples,
                                 const std::vector<AdapterConfig>& exits,
                                 const DistillConfig& dc);

struct ProbeRow {
  int layer;
  double token_f1;
};

struct ProbeConfig {
  double train_fraction = 0.7;
  int iterations = 300;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

// Layer-by-layer readiness sweep: fits an affine probe on frozen hidden
// states per depth and scores token F1 on the held-out split. Row 0 reads
// the embedding output.
std::vector<ProbeRow> probe_layers(const ParamStore& model, const EncoderConfig& cfg,
                                   const std::vector<VerificationSample>& samples,
                                   const ProbeConfig& pc);

struct ExitProfile {
  int fast = 0;
  int balanced = 0;
  int high_accuracy = 0;
};

// Maps depth fractions onto concrete exit layers: argmin |l/L - f| over
// 1..L-1, ties toward the shallower layer, bumped to stay strictly
// increasing.
ExitProfile select_exits(int num_layers,
                         const std::array<double, 3>& fractions = {0.27, 0.50, 0.73});

}  // namespace lchd
