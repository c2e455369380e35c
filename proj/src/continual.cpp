#include "lchd/continual.hpp"

#include <cmath>
#include <stdexcept>

#include "lchd/optim.hpp"
#include "lchd/rng.hpp"

namespace lchd {

double mlm_loss(const Mat& logits, const MaskPlan& plan, Mat* d_logits) {
  if (plan.entries.empty()) throw std::invalid_argument("mlm_loss: empty mask plan");
  if (d_logits) {
    d_logits->resize(logits.rows(), logits.cols());
    d_logits->setZero();
  }
  const double inv_n = 1.0 / static_cast<double>(plan.entries.size());
  double total = 0.0;
  for (const MaskEntry& e : plan.entries) {
    if (e.position < 0 || e.position >= logits.rows())
      throw std::invalid_argument("mlm_loss: plan position outside logits");
    if (e.original_token < 0 || e.original_token >= logits.cols())
      throw std::invalid_argument("mlm_loss: original token outside vocabulary");
    ScalarLossGrad lg = softmax_cross_entropy(logits.row(e.position).transpose(), e.original_token);
    total += lg.loss;
    if (d_logits)
      d_logits->row(e.position) += (lg.grad * static_cast<Scalar>(inv_n)).transpose();
  }
  return total * inv_n;
}

double ewc_penalty(ParamStore& model, const ParamStore& theta_star, const ParamStore& fisher,
                   double lambda, bool accumulate_grads) {
  if (lambda < 0.0) throw std::invalid_argument("ewc_penalty: negative lambda");
  if (lambda == 0.0) return 0.0;
  double total = 0.0;
  for (const auto& name : theta_star.names()) {
    if (!model.contains(name))
      throw std::invalid_argument("ewc_penalty: model lacks anchored parameter " + name);
    Param& p = model.at(name);
    const Param& star = theta_star.at(name);
    const Param& imp = fisher.at(name);
    if (p.value.rows() != star.value.rows() || p.value.cols() != star.value.cols() ||
        p.value.rows() != imp.value.rows() || p.value.cols() != imp.value.cols())
      throw std::invalid_argument("ewc_penalty: shape mismatch for " + name);
    const Scalar* theta = p.value.data();
    const Scalar* anchor = star.value.data();
    const Scalar* f = imp.value.data();
    Scalar* grad = p.grad.data();
    for (Index i = 0; i < p.size(); ++i) {
      double diff = static_cast<double>(theta[i]) - static_cast<double>(anchor[i]);
      total += static_cast<double>(f[i]) * diff * diff;
      if (accumulate_grads)
        grad[i] += static_cast<Scalar>(lambda * static_cast<double>(f[i]) * diff);
    }
  }
  return 0.5 * lambda * total;
}

double ewc_penalty(ParamStore& model, const EwcState& ewc, bool accumulate_grads) {
  return ewc_penalty(model, ewc.theta_star, ewc.fisher, ewc.lambda, accumulate_grads);
}

namespace {

// Forward + masked loss + backward for one sequence; gradient contribution
// scaled by `grad_scale`. Returns the unscaled loss.
double mlm_step_one(ParamStore& model, const EncoderConfig& cfg, const std::vector<int>& tokens,
                    const MaskPlan& plan, std::uint64_t apply_seed, double grad_scale) {
  Rng apply_rng(mix_seed(apply_seed, 21));
  std::vector<int> corrupted = apply_mask_plan(tokens, plan, apply_rng);
  EncoderActivations acts;
  HiddenStack hs = encoder_forward_cached(corrupted, {}, model, cfg, acts);
  HeadCache head_cache;
  Mat logits = head_forward(hs.states.back(), "mlm_head", model, cfg, &head_cache);
  Mat d_logits;
  double loss = mlm_loss(logits, plan, &d_logits);
  d_logits *= static_cast<Scalar>(grad_scale);
  Mat d_h = head_backward(d_logits, "mlm_head", head_cache, model, cfg);
  encoder_backward(d_h, acts, model, cfg);
  return loss;
}

MaskPlan make_plan(const std::vector<int>& tokens, const MlmTrainConfig& tc,
                   std::uint64_t plan_seed) {
  if (tc.mask_mode == MaskMode::kStandard) return standard_mlm_mask(tokens, tc.p_mask, plan_seed);
  RetrievalAwareParams ra = tc.ra;
  ra.p_mlm = tc.p_mask;
  return compose_retrieval_aware(tokens, ra, plan_seed);
}

}  // namespace

ParamStore estimate_fisher(const ParamStore& model, const EncoderConfig& cfg,
                           const std::vector<std::vector<int>>& corpus, int n_batches,
                           int batch_size, double p_mask, std::uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("estimate_fisher: empty corpus");
  if (n_batches < 1 || batch_size < 1)
    throw std::invalid_argument("estimate_fisher: batch counts must be positive");

  ParamStore work = model.clone();
  ParamStore fisher;
  for (const auto& name : model.names()) {
    const Param& p = model.at(name);
    Param& f = (p.rank() == 1) ? fisher.add_vector(name, p.extents[0])
                               : fisher.add(name, p.extents[0], p.extents[1]);
    f.value.setZero();
  }

  Rng pick(mix_seed(seed, 31));
  for (int b = 0; b < n_batches; ++b) {
    work.zero_grads();
    for (int i = 0; i < batch_size; ++i) {
      const std::vector<int>& tokens = corpus[pick.below(corpus.size())];
      std::uint64_t s = mix_seed(seed, 1000003ULL * b + i);
      MaskPlan plan = standard_mlm_mask(tokens, p_mask, s);
      if (plan.entries.empty()) continue;
      mlm_step_one(work, cfg, tokens, plan, s, 1.0 / batch_size);
    }
    for (const auto& name : fisher.names()) {
      const Mat& g = work.at(name).grad;
      fisher.at(name).value.array() += g.array().square();
    }
  }
  for (const auto& name : fisher.names())
    fisher.at(name).value /= static_cast<Scalar>(n_batches);
  return fisher;
}

TrainingLog train_mlm(ParamStore& model, const EncoderConfig& cfg,
                      const std::vector<std::vector<int>>& corpus, const MlmTrainConfig& tc,
                      const EwcState* ewc) {
  if (corpus.empty()) throw std::invalid_argument("train_mlm: empty corpus");
  if (tc.batch_size < 1) throw std::invalid_argument("train_mlm: batch_size must be positive");
  if (tc.lambda > 0.0 && !ewc)
    throw std::invalid_argument("train_mlm: drift penalty requested without an anchor state");
  for (const auto& seq : corpus)
    if (static_cast<int>(seq.size()) > cfg.max_len())
      throw std::invalid_argument("train_mlm: corpus sequence exceeds model window");

  const int steps_per_epoch =
      (static_cast<int>(corpus.size()) + tc.batch_size - 1) / tc.batch_size;
  const int total_steps = steps_per_epoch * tc.epochs;
  WarmupConstantSchedule sched = WarmupConstantSchedule::from_ratio(tc.warmup_ratio, total_steps);
  Adam opt(model, {.lr = tc.learning_rate});

  TrainingLog log;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle(mix_seed(tc.seed, 100 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      std::size_t end = std::min(order.size(), start + tc.batch_size);
      model.zero_grads();
      double batch_loss = 0.0;
      int used = 0;
      for (std::size_t i = start; i < end; ++i) {
        const std::vector<int>& tokens = corpus[order[i]];
        std::uint64_t s = mix_seed(tc.seed, 2000003ULL * step + (i - start));
        MaskPlan plan = make_plan(tokens, tc, s);
        batch_loss += mlm_step_one(model, cfg, tokens, plan, s,
                                   1.0 / static_cast<double>(end - start));
        ++used;
      }
      batch_loss /= used;
      double penalty = 0.0;
      if (ewc && tc.lambda > 0.0)
        penalty = ewc_penalty(model, ewc->theta_star, ewc->fisher, tc.lambda, true);
      double scale = sched.scale_at(step);
      opt.step(scale);
      log.steps.push_back({step, batch_loss, penalty, tc.learning_rate * scale});
      ++step;
    }
  }
  return log;
}

TrainingLog train_extend(ParamStore& model, const EncoderConfig& cfg,
                         const std::vector<std::vector<int>>& corpus, const MlmTrainConfig& tc,
                         const EwcState* ewc) {
  if (cfg.rope.scale_s <= 1.0f)
    throw std::invalid_argument("train_extend: config carries no extension factor");
  return train_mlm(model, cfg, corpus, tc, ewc);
}

}  // namespace lchd
