#pragma once

#include <cstdint>
#include <vector>

#include "lchd/encoder.hpp"
#include "lchd/masking.hpp"
#include "lchd/tensor.hpp"

namespace lchd {

// Mean cross entropy of the original tokens at plan positions. d_logits, when
// requested, receives the loss gradient (rows outside the plan stay zero).
// An empty plan is an error; silently returning zero would hide misconfigured
// masking upstream.
double mlm_loss(const Mat& logits, const MaskPlan& plan, Mat* d_logits = nullptr);

// Quadratic drift penalty anchored at a frozen parameter snapshot, weighted
// by a per-parameter importance estimate.
struct EwcState {
  ParamStore theta_star;
  ParamStore fisher;
  double lambda = 1000.0;
};

// (lambda / 2) * sum_i F_i (theta_i - theta*_i)^2 over anchored names; with
// accumulate_grads, adds lambda * F_i (theta_i - theta*_i) to the grads.
double ewc_penalty(ParamStore& model, const ParamStore& theta_star, const ParamStore& fisher,
                   double lambda, bool accumulate_grads);
double ewc_penalty(ParamStore& model, const EwcState& ewc, bool accumulate_grads);

// Diagonal importance estimate: mean over n_batches of the squared MLM-loss
// gradient, evaluated on the frozen model with freshly drawn masks.
ParamStore estimate_fisher(const ParamStore& model, const EncoderConfig& cfg,
                           const std::vector<std::vector<int>>& corpus, int n_batches,
                           int batch_size, double p_mask, std::uint64_t seed);

enum class MaskMode { kStandard, kRetrievalAware };

struct MlmTrainConfig {
  double learning_rate = 1e-5;
  double warmup_ratio = 0.1;
  int epochs = 1;
  int batch_size = 8;
  MaskMode mask_mode = MaskMode::kStandard;
  double p_mask = 0.30;
  RetrievalAwareParams ra;  // used when mask_mode is retrieval-aware
  double lambda = 0.0;      // drift penalty weight; 0 disables the anchor
  std::uint64_t seed = 0;
};

struct TrainStepRecord {
  int step;
  double mlm_loss;
  double ewc_penalty;
  double lr;
};

struct TrainingLog {
  std::vector<TrainStepRecord> steps;
};

// Masked-language training loop shared by pretraining and context extension.
// When tc.lambda > 0 an EwcState is required and its penalty joins the loss.
TrainingLog train_mlm(ParamStore& model, const EncoderConfig& cfg,
                      const std::vector<std::vector<int>>& corpus, const MlmTrainConfig& tc,
                      const EwcState* ewc);

// Context-extension stage: validates that the config carries an extension
// factor and that the corpus fits the extended window, then trains.
TrainingLog train_extend(ParamStore& model, const EncoderConfig& cfg,
                         const std::vector<std::vector<int>>& corpus, const MlmTrainConfig& tc,
                         const EwcState* ewc);

}  // namespace lchd
