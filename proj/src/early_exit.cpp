#include "lchd/early_exit.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "lchd/optim.hpp"
#include "lchd/rng.hpp"

namespace lchd {

namespace {
std::string exit_prefix(int layer) { return "exit." + std::to_string(layer) + "."; }
}  // namespace

std::int64_t adapter_param_count(int d_model, int bottleneck) {
  if (d_model < 1 || bottleneck < 1)
    throw std::invalid_argument("adapter_param_count: dimensions must be positive");
  std::int64_t d = d_model, b = bottleneck;
  return 2 * d + (d * b + b) + (2 * b + 2);
}

void add_adapter_params(ParamStore& model, const EncoderConfig& cfg, const AdapterConfig& ac,
                        std::uint64_t seed) {
  if (ac.exit_layer < 1 || ac.exit_layer >= cfg.num_layers)
    throw std::invalid_argument("add_adapter_params: exit layer out of range");
  if (ac.bottleneck < 1)
    throw std::invalid_argument("add_adapter_params: bottleneck must be positive");
  const std::string p = exit_prefix(ac.exit_layer);
  if (model.contains(p + "ln.gain")) return;
  Rng rng(mix_seed(seed, 0xada0 + ac.exit_layer));
  const Index d = cfg.d_model, b = ac.bottleneck;
  model.add_vector(p + "ln.gain", d).value.setOnes();
  model.add_vector(p + "ln.bias", d);
  Param& down = model.add(p + "down.w", d, b);
  for (Index i = 0; i < down.value.size(); ++i) down.value.data()[i] = rng.normal() * 0.02f;
  model.add_vector(p + "down.b", b);
  Param& up = model.add(p + "up.w", b, 2);
  for (Index i = 0; i < up.value.size(); ++i) up.value.data()[i] = rng.normal() * 0.02f;
  model.add_vector(p + "up.b", 2);
}

std::vector<int> adapter_layers_present(const ParamStore& model, const EncoderConfig& cfg) {
  std::vector<int> out;
  for (int l = 1; l < cfg.num_layers; ++l)
    if (model.contains(exit_prefix(l) + "ln.gain")) out.push_back(l);
  return out;
}

Mat adapter_forward(const Mat& h, const ParamStore& model, const EncoderConfig& cfg,
                    int exit_layer, AdapterCache* cache, FlopCounter* flops) {
  const std::string p = exit_prefix(exit_layer);
  if (!model.contains(p + "ln.gain"))
    throw std::invalid_argument("adapter_forward: no adapter at layer " +
                                std::to_string(exit_layer));
  AdapterCache local;
  AdapterCache& c = cache ? *cache : local;
  c.normed = layer_norm(h, model.at(p + "ln.gain").value.row(0).transpose(),
                        model.at(p + "ln.bias").value.row(0).transpose(), cfg.ln_eps, &c.ln);
  c.pre = c.normed * model.at(p + "down.w").value;
  c.pre.rowwise() += model.at(p + "down.b").value.row(0);
  c.act = gelu(c.pre);
  Mat logits = c.act * model.at(p + "up.w").value;
  logits.rowwise() += model.at(p + "up.b").value.row(0);
  if (flops) {
    std::uint64_t n = h.rows(), d = h.cols(), b = c.pre.cols();
    flops->add(8 * n * d + 2 * n * d * b + n * b + 8 * n * b + 2 * n * b * 2 + n * 2);
  }
  check_finite(logits, "adapter logits");
  return logits;
}

void adapter_backward(const Mat& d_logits, const AdapterCache& cache, ParamStore& model,
                      int exit_layer) {
  const std::string p = exit_prefix(exit_layer);
  Param& up = model.at(p + "up.w");
  up.grad.noalias() += cache.act.transpose() * d_logits;
  model.at(p + "up.b").grad.row(0) += d_logits.colwise().sum();
  Mat d_act = d_logits * up.value.transpose();
  Mat d_pre = gelu_backward(cache.pre, d_act);
  Param& down = model.at(p + "down.w");
  down.grad.noalias() += cache.normed.transpose() * d_pre;
  model.at(p + "down.b").grad.row(0) += d_pre.colwise().sum();
  Mat d_normed = d_pre * down.value.transpose();
  Param& g = model.at(p + "ln.gain");
  Param& b = model.at(p + "ln.bias");
  Vec dgain = Vec::Zero(d_normed.cols()), dbias = Vec::Zero(d_normed.cols());
  layer_norm_backward(cache.ln, g.value.row(0).transpose(), d_normed, dgain, dbias);
  g.grad.row(0) += dgain.transpose();
  b.grad.row(0) += dbias.transpose();
}

double distill_loss(const Mat& student_logits, const Mat& teacher_logits,
                    const AssembledInput& in, const DistillConfig& dc, Mat* d_student,
                    DistillParts* parts) {
  if (student_logits.rows() != teacher_logits.rows() ||
      student_logits.cols() != teacher_logits.cols() || student_logits.cols() != 2)
    throw std::invalid_argument("distill_loss: logits shape mismatch");
  if (dc.temperature <= 0.0)
    throw std::invalid_argument("distill_loss: temperature must be positive");
  if (d_student) {
    d_student->resize(student_logits.rows(), student_logits.cols());
    d_student->setZero();
  }

  std::vector<int> positions;
  for (int pos = in.response_offset; pos < static_cast<int>(in.tokens.size()); ++pos)
    if (in.loss_labels[pos] != kIgnoreLabel) positions.push_back(pos);
  if (positions.empty())
    throw std::invalid_argument("distill_loss: no supervised positions");
  const double inv_n = 1.0 / static_cast<double>(positions.size());
  const double T = dc.temperature;

  double ce_total = 0.0, kl_total = 0.0;
  for (int pos : positions) {
    Vec s = student_logits.row(pos).transpose();
    Vec t = teacher_logits.row(pos).transpose();
    int y = in.loss_labels[pos];

    ScalarLossGrad hard = softmax_cross_entropy(s, y);
    ce_total += hard.loss;

    Vec q_s = softmax((s / static_cast<Scalar>(T)).eval());
    Vec q_t = softmax((t / static_cast<Scalar>(T)).eval());
    double kl = 0.0;
    for (Index j = 0; j < 2; ++j) {
      double pt = std::max(static_cast<double>(q_t[j]), 1e-12);
      double ps = std::max(static_cast<double>(q_s[j]), 1e-12);
      kl += pt * (std::log(pt) - std::log(ps));
    }
    kl_total += kl;

    if (d_student) {
      for (Index j = 0; j < 2; ++j) {
        double g = dc.ce_weight * static_cast<double>(hard.grad[j]) +
                   dc.kl_weight * T * (static_cast<double>(q_s[j]) - static_cast<double>(q_t[j]));
        (*d_student)(pos, j) += static_cast<Scalar>(g * inv_n);
      }
    }
  }

  double ce = ce_total * inv_n;
  double kl = kl_total * inv_n;
  double kl_scaled = T * T * kl;
  if (parts) *parts = {ce, kl, kl_scaled};
  return dc.ce_weight * ce + dc.kl_weight * kl_scaled;
}

AdapterTrainStats train_adapters(ParamStore& model, const EncoderConfig& cfg,
                                 const std::vector<VerificationSample>& samples,
                                 const std::vector<AdapterConfig>& exits,
                                 const DistillConfig& dc) {
  if (exits.empty()) throw std::invalid_argument("train_adapters: no exits requested");
  if (!model.contains("det_head.w"))
    throw std::invalid_argument("train_adapters: model has no trained token head to distill from");
  std::set<int> seen;
  for (const auto& e : exits) {
    if (!seen.insert(e.exit_layer).second)
      throw std::invalid_argument("train_adapters: duplicate exit layer");
    add_adapter_params(model, cfg, e, dc.seed);
  }

  AdapterTrainStats stats;
  std::vector<AssembledInput> inputs;
  for (const auto& s : samples) {
    try {
      inputs.push_back(assemble_input(s, cfg.max_len()));
    } catch (const std::invalid_argument&) {
      ++stats.rejected_overlong;
    }
  }
  if (inputs.empty()) throw std::invalid_argument("train_adapters: no usable samples");

  Adam opt(model, {.lr = dc.learning_rate},
           [](const std::string& name) { return name.rfind("exit.", 0) == 0; });

  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < dc.epochs; ++epoch) {
    Rng shuffle(mix_seed(dc.seed, 700 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_loss = 0.0;
    int terms = 0;
    for (std::size_t start = 0; start < order.size(); start += dc.batch_size) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(dc.batch_size));
      model.zero_grads();
      for (std::size_t i = start; i < end; ++i) {
        const AssembledInput& in = inputs[order[i]];
        HiddenStack hs = encoder_forward(in.tokens, {}, model, cfg);
        ++stats.backbone_forwards;
        Mat teacher = head_forward(hs.states.back(), "det_head", model, cfg);
        for (const auto& e : exits) {
          AdapterCache cache;
          Mat student = adapter_forward(hs.states[e.exit_layer], model, cfg, e.exit_layer, &cache);
          Mat d_student;
          double loss = distill_loss(student, teacher, in, dc, &d_student);
          d_student *= static_cast<Scalar>(1.0 / static_cast<double>(end - start));
          adapter_backward(d_student, cache, model, e.exit_layer);
          epoch_loss += loss;
          ++terms;
        }
      }
      opt.step();
      ++stats.steps;
    }
    stats.epoch_losses.push_back(terms > 0 ? epoch_loss / terms : 0.0);
  }
  return stats;
}

std::vector<ProbeRow> probe_layers(const ParamStore& model, const EncoderConfig& cfg,
                                   const std::vector<VerificationSample>& samples,
                                   const ProbeConfig& pc) {
  if (samples.size() < 4)
    throw std::invalid_argument("probe_layers: too few samples to split");
  int n_train = static_cast<int>(std::lround(pc.train_fraction * samples.size()));
  n_train = std::clamp(n_train, 1, static_cast<int>(samples.size()) - 1);

  const int L = cfg.num_layers;
  std::vector<Mat> feats(L + 1);  // per layer: rows = response tokens
  std::vector<int> split_of_row;

  std::vector<AssembledInput> inputs;
  std::vector<int> sample_split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    inputs.push_back(assemble_input(samples[i], cfg.max_len()));
    sample_split.push_back(static_cast<int>(i) < n_train ? 0 : 1);
  }

  std::size_t total_rows = 0;
  for (const auto& in : inputs) total_rows += in.response_length();
  for (int l = 0; l <= L; ++l) feats[l].resize(total_rows, cfg.d_model);
  std::vector<int> all_labels(total_rows);
  split_of_row.resize(total_rows);

  std::size_t row = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const AssembledInput& in = inputs[i];
    HiddenStack hs = encoder_forward(in.tokens, {}, model, cfg);
    for (int t = 0; t < in.response_length(); ++t) {
      for (int l = 0; l <= L; ++l)
        feats[l].row(row) = hs.states[l].row(in.response_offset + t);
      all_labels[row] = in.loss_labels[in.response_offset + t];
      split_of_row[row] = sample_split[i];
      ++row;
    }
  }

  std::vector<ProbeRow> table;
  for (int l = 0; l <= L; ++l) {
    // affine probe trained with full-batch updates on the train rows
    Mat w = Mat::Zero(cfg.d_model, 2);
    Vec b = Vec::Zero(2);
    Mat mw = Mat::Zero(cfg.d_model, 2), vw = Mat::Zero(cfg.d_model, 2);
    Vec mb = Vec::Zero(2), vb = Vec::Zero(2);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int it = 1; it <= pc.iterations; ++it) {
      Mat gw = Mat::Zero(cfg.d_model, 2);
      Vec gb = Vec::Zero(2);
      std::size_t n_rows = 0;
      for (std::size_t r = 0; r < total_rows; ++r) {
        if (split_of_row[r] != 0) continue;
        Vec z = w.transpose() * feats[l].row(r).transpose() + b;
        ScalarLossGrad lg = softmax_cross_entropy(z, all_labels[r]);
        gw += feats[l].row(r).transpose() * lg.grad.transpose();
        gb += lg.grad;
        ++n_rows;
      }
      gw /= static_cast<Scalar>(n_rows);
      gb /= static_cast<Scalar>(n_rows);
      auto adam_update = [&](Mat& p, Mat& m, Mat& v, const Mat& g) {
        m = static_cast<Scalar>(b1) * m + static_cast<Scalar>(1 - b1) * g;
        v = static_cast<Scalar>(b2) * v + static_cast<Scalar>(1 - b2) * g.cwiseProduct(g);
        double c1 = 1 - std::pow(b1, it), c2 = 1 - std::pow(b2, it);
        p.array() -= static_cast<Scalar>(pc.learning_rate / c1) * m.array() /
                     ((v.array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(eps));
      };
      adam_update(w, mw, vw, gw);
      Mat bM = b.transpose(), mbM = mb.transpose(), vbM = vb.transpose(), gbM = gb.transpose();
      adam_update(bM, mbM, vbM, gbM);
      b = bM.transpose();
      mb = mbM.transpose();
      vb = vbM.transpose();
    }
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t r = 0; r < total_rows; ++r) {
      if (split_of_row[r] != 1) continue;
      Vec z = w.transpose() * feats[l].row(r).transpose() + b;
      int pred = z[1] > z[0] ? 1 : 0;
      int g = all_labels[r];
      if (pred == 1 && g == 1) ++tp;
      if (pred == 1 && g == 0) ++fp;
      if (pred == 0 && g == 1) ++fn;
    }
    double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double r2 = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    double f1 = p + r2 > 0 ? 2 * p * r2 / (p + r2) : 0.0;
    table.push_back({l, f1});
  }
  return table;
}

ExitProfile select_exits(int num_layers, const std::array<double, 3>& fractions) {
  if (num_layers < 2)
    throw std::invalid_argument("select_exits: need at least two layers");
  std::array<int, 3> picks;
  for (int i = 0; i < 3; ++i) {
    int best = 1;
    double best_err = 1e9;
    for (int l = 1; l < num_layers; ++l) {
      double err = std::abs(static_cast<double>(l) / num_layers - fractions[i]);
      if (err < best_err - 1e-12) {
        best_err = err;
        best = l;
      }
    }
    picks[i] = best;
  }
  for (int i = 1; i < 3; ++i)
    if (picks[i] <= picks[i - 1]) picks[i] = std::min(num_layers - 1, picks[i - 1] + 1);
  if (picks[0] >= picks[1] || picks[1] >= picks[2])
    throw std::invalid_argument("select_exits: not enough layers for three distinct exits");
  return {picks[0], picks[1], picks[2]};
}

}  // namespace lchd
