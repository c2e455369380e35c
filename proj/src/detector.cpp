#include "lchd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lchd/early_exit.hpp"
#include "lchd/optim.hpp"
#include "lchd/rng.hpp"
#include "lchd/tokenizer.hpp"

namespace lchd {

AssembledInput assemble_input(const VerificationSample& s, int max_len) {
  if (s.gold_labels.size() != s.response_tokens.size())
    throw std::invalid_argument("assemble_input: one gold label per response token required");
  if (s.response_tokens.empty())
    throw std::invalid_argument("assemble_input: empty response");
  for (int l : s.gold_labels)
    if (l != 0 && l != 1)
      throw std::invalid_argument("assemble_input: gold labels must be 0 or 1");

  AssembledInput out;
  std::size_t total =
      3 + s.context_tokens.size() + s.query_tokens.size() + s.response_tokens.size();
  if (static_cast<int>(total) > max_len)
    throw std::invalid_argument("assemble_input: assembled length exceeds window");
  out.tokens.reserve(total);
  out.tokens.push_back(tok::kCls);
  out.tokens.insert(out.tokens.end(), s.context_tokens.begin(), s.context_tokens.end());
  out.tokens.push_back(tok::kSep);
  out.tokens.insert(out.tokens.end(), s.query_tokens.begin(), s.query_tokens.end());
  out.tokens.push_back(tok::kSep);
  out.response_offset = static_cast<int>(out.tokens.size());
  out.tokens.insert(out.tokens.end(), s.response_tokens.begin(), s.response_tokens.end());

  out.loss_labels.assign(out.tokens.size(), kIgnoreLabel);
  for (std::size_t i = 0; i < s.gold_labels.size(); ++i)
    out.loss_labels[out.response_offset + i] = s.gold_labels[i];
  return out;
}

namespace {

// Focal term and its logit gradient. With u the probability of the target
// class: loss = -(1-u)^gamma log u, and
// d loss / d z_j = [gamma u (1-u)^(gamma-1) log u - (1-u)^gamma] (delta_jt - p_j).
// gamma = 0 reduces to plain cross entropy.
double focal_position(const Vec& logits, int target, double gamma, Vec* dz) {
  Vec p = softmax(logits);
  double u = std::clamp(static_cast<double>(p[target]), 1e-7, 1.0 - 1e-7);
  double log_u = std::log(u);
  double pow_g = std::pow(1.0 - u, gamma);
  double loss = -pow_g * log_u;
  if (dz) {
    double pow_gm1 = gamma > 0.0 ? std::pow(1.0 - u, gamma - 1.0) : 0.0;
    double front = gamma * u * pow_gm1 * log_u - pow_g;
    dz->resize(logits.size());
    for (Index j = 0; j < logits.size(); ++j) {
      double delta = (j == target) ? 1.0 : 0.0;
      (*dz)[j] = static_cast<Scalar>(front * (delta - static_cast<double>(p[j])));
    }
  }
  return loss;
}

}  // namespace

double detection_loss(const Mat& logits, const AssembledInput& in, const DetectionLossConfig& lc,
                      Mat* d_logits) {
  if (logits.rows() != static_cast<Index>(in.tokens.size()) || logits.cols() != 2)
    throw std::invalid_argument("detection_loss: logits shape mismatch");
  if (lc.kind == DetectionLossKind::kWeighted && (lc.weight0 <= 0.0 || lc.weight1 <= 0.0))
    throw std::invalid_argument("detection_loss: class weights must be positive");
  if (lc.kind == DetectionLossKind::kFocal && lc.gamma < 0.0)
    throw std::invalid_argument("detection_loss: gamma must be non-negative");
  if (d_logits) {
    d_logits->resize(logits.rows(), logits.cols());
    d_logits->setZero();
  }

  double total = 0.0, weight_total = 0.0;
  int supervised = 0;
  struct Term { int pos; int y; double w; };
  std::vector<Term> terms;
  for (int pos = in.response_offset; pos < static_cast<int>(in.tokens.size()); ++pos) {
    int label = in.loss_labels[pos];
    if (label == kIgnoreLabel) continue;
    if (label != 0 && label != 1)
      throw std::invalid_argument("detection_loss: labels must be 0, 1 or the ignore sentinel");
    double w = 1.0;
    if (lc.kind == DetectionLossKind::kWeighted) w = label == 1 ? lc.weight1 : lc.weight0;
    terms.push_back({pos, label, w});
    weight_total += w;
    ++supervised;
  }
  if (supervised == 0)
    throw std::invalid_argument("detection_loss: no supervised positions");

  for (const Term& t : terms) {
    Vec row = logits.row(t.pos).transpose();
    if (lc.kind == DetectionLossKind::kFocal) {
      Vec dz;
      total += t.w * focal_position(row, t.y, lc.gamma, d_logits ? &dz : nullptr);
      if (d_logits)
        d_logits->row(t.pos) += static_cast<Scalar>(t.w / weight_total) * dz.transpose();
    } else {
      ScalarLossGrad lg = softmax_cross_entropy(row, t.y);
      total += t.w * lg.loss;
      if (d_logits)
        d_logits->row(t.pos) += static_cast<Scalar>(t.w / weight_total) * lg.grad.transpose();
    }
  }
  return total / weight_total;
}

DetectorTrainStats train_detector(ParamStore& model, const EncoderConfig& cfg,
                                  const std::vector<VerificationSample>& samples,
                                  const DetectorTrainConfig& tc) {
  if (tc.batch_size < 1) throw std::invalid_argument("train_detector: batch_size must be positive");
  if (tc.epochs < 0) throw std::invalid_argument("train_detector: negative epochs");
  add_detection_head(model, cfg);

  DetectorTrainStats stats;
  stats.config_echo = tc;

  std::vector<AssembledInput> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) {
    try {
      inputs.push_back(assemble_input(s, cfg.max_len()));
    } catch (const std::invalid_argument&) {
      ++stats.rejected_overlong;
    }
  }
  if (tc.epochs == 0) return stats;
  if (inputs.empty()) throw std::invalid_argument("train_detector: no usable samples");

  Adam opt(model, {.lr = tc.learning_rate});
  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle(mix_seed(tc.seed, 500 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_loss = 0.0;
    int epoch_terms = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      std::size_t end = std::min(order.size(), start + tc.batch_size);
      model.zero_grads();
      for (std::size_t i = start; i < end; ++i) {
        const AssembledInput& in = inputs[order[i]];
        EncoderActivations acts;
        HiddenStack hs = encoder_forward_cached(in.tokens, {}, model, cfg, acts);
        HeadCache head_cache;
        Mat logits = head_forward(hs.states.back(), "det_head", model, cfg, &head_cache);
        Mat d_logits;
        double loss = detection_loss(logits, in, tc.loss, &d_logits);
        d_logits *= static_cast<Scalar>(1.0 / static_cast<double>(end - start));
        Mat d_h = head_backward(d_logits, "det_head", head_cache, model, cfg);
        encoder_backward(d_h, acts, model, cfg);
        epoch_loss += loss;
        ++epoch_terms;
        ++stats.samples_seen;
      }
      opt.step();
      ++stats.steps;
    }
    stats.epoch_losses.push_back(epoch_loss / epoch_terms);
  }
  return stats;
}

std::vector<std::pair<int, int>> spans_from_binary(const std::vector<int>& binary) {
  std::vector<std::pair<int, int>> spans;
  int start = -1;
  for (int i = 0; i < static_cast<int>(binary.size()); ++i) {
    if (binary[i] != 0 && binary[i] != 1)
      throw std::invalid_argument("spans_from_binary: entries must be 0 or 1");
    if (binary[i] == 1 && start < 0) start = i;
    if (binary[i] == 0 && start >= 0) {
      spans.emplace_back(start, i);
      start = -1;
    }
  }
  if (start >= 0) spans.emplace_back(start, static_cast<int>(binary.size()));
  return spans;
}

std::vector<int> binary_from_spans(const std::vector<std::pair<int, int>>& spans, int len) {
  std::vector<int> out(len, 0);
  for (auto [s, e] : spans) {
    if (s < 0 || e > len || s >= e)
      throw std::invalid_argument("binary_from_spans: span outside sequence");
    for (int i = s; i < e; ++i) out[i] = 1;
  }
  return out;
}

PredictResult predict(const ParamStore& model, const EncoderConfig& cfg,
                      const VerificationSample& s, std::optional<int> exit_layer) {
  AssembledInput in = assemble_input(s, cfg.max_len());
  PredictResult out;
  Mat logits;
  if (exit_layer && *exit_layer != cfg.num_layers) {
    int l = *exit_layer;
    if (l < 1 || l >= cfg.num_layers)
      throw std::invalid_argument("predict: exit layer out of range");
    ForwardOptions opts;
    opts.stop_layer = l;
    HiddenStack hs = encoder_forward(in.tokens, {}, model, cfg, opts);
    logits = adapter_forward(hs.states.back(), model, cfg, l);
  } else {
    HiddenStack hs = encoder_forward(in.tokens, {}, model, cfg);
    logits = head_forward(hs.states.back(), "det_head", model, cfg);
  }

  const int rlen = in.response_length();
  out.probs.resize(rlen);
  out.binary.resize(rlen);
  for (int i = 0; i < rlen; ++i) {
    Vec p = softmax(logits.row(in.response_offset + i).transpose());
    out.probs[i] = p[1];
    out.binary[i] = p[1] > 0.5f ? 1 : 0;
  }
  out.spans = spans_from_binary(out.binary);
  out.example_flag = !out.spans.empty();
  return out;
}

DetectionMetrics compute_metrics(const std::vector<PredictResult>& preds,
                                 const std::vector<VerificationSample>& samples) {
  if (preds.size() != samples.size())
    throw std::invalid_argument("compute_metrics: prediction/sample count mismatch");
  DetectionMetrics m;
  std::int64_t ex_tp = 0, ex_fp = 0, ex_fn = 0;
  std::int64_t span_tp = 0, span_pred = 0, span_gold = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& pred = preds[i];
    const auto& gold = samples[i].gold_labels;
    if (pred.binary.size() != gold.size())
      throw std::invalid_argument("compute_metrics: prediction length mismatch");
    bool any_pred = false, any_gold = false;
    for (std::size_t t = 0; t < gold.size(); ++t) {
      int p = pred.binary[t], g = gold[t];
      if (p == 1 && g == 1) ++m.token_tp;
      if (p == 1 && g == 0) ++m.token_fp;
      if (p == 0 && g == 1) ++m.token_fn;
      any_pred |= p == 1;
      any_gold |= g == 1;
    }
    if (any_pred && any_gold) ++ex_tp;
    if (any_pred && !any_gold) ++ex_fp;
    if (!any_pred && any_gold) ++ex_fn;

    auto gold_spans = spans_from_binary(gold);
    span_pred += static_cast<std::int64_t>(pred.spans.size());
    span_gold += static_cast<std::int64_t>(gold_spans.size());
    for (const auto& sp : pred.spans)
      if (std::find(gold_spans.begin(), gold_spans.end(), sp) != gold_spans.end()) ++span_tp;
  }

  auto prf = [](std::int64_t tp, std::int64_t fp, std::int64_t fn, double& p, double& r,
                double& f1) {
    p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1 = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
  };
  prf(m.token_tp, m.token_fp, m.token_fn, m.token_precision, m.token_recall, m.token_f1);
  prf(ex_tp, ex_fp, ex_fn, m.example_precision, m.example_recall, m.example_f1);
  m.hallucination_recall = m.token_recall;
  double sp = span_pred > 0 ? static_cast<double>(span_tp) / span_pred : 0.0;
  double sr = span_gold > 0 ? static_cast<double>(span_tp) / span_gold : 0.0;
  m.span_f1 = sp + sr > 0 ? 2.0 * sp * sr / (sp + sr) : 0.0;
  return m;
}

}  // namespace lchd
