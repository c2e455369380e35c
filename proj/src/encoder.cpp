#include "lchd/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lchd/rng.hpp"
#include "lchd/tokenizer.hpp"

namespace lchd {

namespace {

constexpr Scalar kMaskedScore = -1e30f;

std::string layer_prefix(int l) { return "layers." + std::to_string(l) + "."; }

void gaussian_fill(Mat& m, Rng& rng, Scalar std_dev) {
  Scalar* p = m.data();
  for (Index i = 0; i < m.size(); ++i) p[i] = rng.normal() * std_dev;
}

std::uint64_t layer_flops(const EncoderConfig& cfg, int n) {
  const std::uint64_t nn = static_cast<std::uint64_t>(n);
  const std::uint64_t d = cfg.d_model, f = cfg.d_ffn, h = cfg.num_heads;
  std::uint64_t total = 0;
  total += 8 * nn * d;                       // ln1
  total += 3 * (2 * nn * d * d + nn * d);    // qkv projections
  total += 6 * nn * d;                       // rotations
  total += 2 * nn * nn * d + h * nn * nn;    // scores + scaling
  total += 5 * h * nn * nn;                  // softmax
  total += 2 * nn * nn * d;                  // prob * value
  total += 2 * nn * d * d + nn * d;          // output projection
  total += nn * d;                           // residual
  total += 8 * nn * d;                       // ln2
  total += 2 * nn * d * f + nn * f;          // ffn in
  total += 8 * nn * f;                       // gelu
  total += 2 * nn * f * d + nn * d;          // ffn out
  total += nn * d;                           // residual
  return total;
}

struct ShapeSpec {
  std::int64_t rows, cols;  // cols < 0 means rank-1 of length rows
};

bool expected_shape(const std::string& name, const EncoderConfig& cfg, ShapeSpec& out) {
  const std::int64_t d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size;
  auto vec = [&](std::int64_t n) { return ShapeSpec{n, -1}; };
  if (name == "embed.tokens") { out = {v, d}; return true; }
  if (name == "final_norm.gain" || name == "final_norm.bias") { out = vec(d); return true; }
  if (name == "mlm_head.w") { out = {d, v}; return true; }
  if (name == "mlm_head.b") { out = vec(v); return true; }
  if (name == "det_head.w") { out = {d, 2}; return true; }
  if (name == "det_head.b") { out = vec(2); return true; }
  if (name.rfind("layers.", 0) == 0) {
    std::size_t dot = name.find('.', 7);
    if (dot == std::string::npos) return false;
    int l;
    try { l = std::stoi(name.substr(7, dot - 7)); } catch (...) { return false; }
    if (l < 0 || l >= cfg.num_layers) return false;
    std::string rest = name.substr(dot + 1);
    if (rest == "attn.ln.gain" || rest == "attn.ln.bias" || rest == "ffn.ln.gain" ||
        rest == "ffn.ln.bias") { out = vec(d); return true; }
    if (rest == "attn.wq" || rest == "attn.wk" || rest == "attn.wv" || rest == "attn.wo") {
      out = {d, d}; return true;
    }
    if (rest == "attn.bq" || rest == "attn.bk" || rest == "attn.bv" || rest == "attn.bo") {
      out = vec(d); return true;
    }
    if (rest == "ffn.w1") { out = {d, f}; return true; }
    if (rest == "ffn.b1") { out = vec(f); return true; }
    if (rest == "ffn.w2") { out = {f, d}; return true; }
    if (rest == "ffn.b2") { out = vec(d); return true; }
    return false;
  }
  return false;
}

// exit.<l>.{ln.gain, ln.bias, down.w, down.b, up.w, up.b}; the bottleneck
// width is free, so cross-check the group's internal consistency instead.
bool validate_adapter_tensor(const std::string& name, const Param& p,
                             const ParamStore& model, const EncoderConfig& cfg) {
  std::size_t dot = name.find('.', 5);
  if (dot == std::string::npos) return false;
  int l;
  try { l = std::stoi(name.substr(5, dot - 5)); } catch (...) { return false; }
  if (l < 1 || l >= cfg.num_layers) return false;
  std::string rest = name.substr(dot + 1);
  const std::int64_t d = cfg.d_model;
  if (rest == "ln.gain" || rest == "ln.bias")
    return p.rank() == 1 && p.extents[0] == d;
  if (rest == "down.w") {
    if (p.rank() != 2 || p.extents[0] != d || p.extents[1] < 1) return false;
    std::string bname = name.substr(0, dot + 1) + "down.b";
    return !model.contains(bname) || model.at(bname).extents[0] == p.extents[1];
  }
  if (rest == "down.b") return p.rank() == 1 && p.extents[0] >= 1;
  if (rest == "up.w") {
    if (p.rank() != 2 || p.extents[1] != 2) return false;
    std::string dname = name.substr(0, dot + 1) + "down.b";
    return !model.contains(dname) || model.at(dname).extents[0] == p.extents[0];
  }
  if (rest == "up.b") return p.rank() == 1 && p.extents[0] == 2;
  return false;
}

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers <= 0) throw std::invalid_argument("EncoderConfig: num_layers must be positive");
  if (d_model <= 0 || num_heads <= 0 || d_model % num_heads != 0)
    throw std::invalid_argument("EncoderConfig: d_model must divide evenly into heads");
  if (d_ffn <= 0) throw std::invalid_argument("EncoderConfig: d_ffn must be positive");
  if (vocab_size < tok::kVocab)
    throw std::invalid_argument("EncoderConfig: vocab_size below tokenizer vocabulary");
  if (head_dim() != rope.head_dim)
    throw std::invalid_argument("EncoderConfig: rope.head_dim must equal d_model / num_heads");
  rope.validate();
}

ParamStore init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore m;
  Rng rng(mix_seed(seed, 0x1c0de));
  const Index d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size;
  gaussian_fill(m.add("embed.tokens", v, d).value, rng, 0.02f);
  for (int l = 0; l < cfg.num_layers; ++l) {
    std::string p = layer_prefix(l);
    m.add_vector(p + "attn.ln.gain", d).value.setOnes();
    m.add_vector(p + "attn.ln.bias", d);
    gaussian_fill(m.add(p + "attn.wq", d, d).value, rng, 0.02f);
    m.add_vector(p + "attn.bq", d);
    gaussian_fill(m.add(p + "attn.wk", d, d).value, rng, 0.02f);
    m.add_vector(p + "attn.bk", d);
    gaussian_fill(m.add(p + "attn.wv", d, d).value, rng, 0.02f);
    m.add_vector(p + "attn.bv", d);
    gaussian_fill(m.add(p + "attn.wo", d, d).value, rng, 0.02f);
    m.add_vector(p + "attn.bo", d);
    m.add_vector(p + "ffn.ln.gain", d).value.setOnes();
    m.add_vector(p + "ffn.ln.bias", d);
    gaussian_fill(m.add(p + "ffn.w1", d, f).value, rng, 0.02f);
    m.add_vector(p + "ffn.b1", f);
    gaussian_fill(m.add(p + "ffn.w2", f, d).value, rng, 0.02f);
    m.add_vector(p + "ffn.b2", d);
  }
  m.add_vector("final_norm.gain", d).value.setOnes();
  m.add_vector("final_norm.bias", d);
  gaussian_fill(m.add("mlm_head.w", d, v).value, rng, 0.02f);
  m.add_vector("mlm_head.b", v);
  return m;
}

void add_detection_head(ParamStore& model, const EncoderConfig& cfg) {
  if (model.contains("det_head.w")) return;
  model.add("det_head.w", cfg.d_model, 2);
  model.add_vector("det_head.b", 2);
}

std::int64_t count_params(const ParamStore& model, const EncoderConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  for (const auto& name : model.names()) {
    const Param& p = model.at(name);
    if (name.rfind("exit.", 0) == 0) {
      if (!validate_adapter_tensor(name, p, model, cfg))
        throw std::invalid_argument("count_params: shape mismatch for " + name);
    } else {
      ShapeSpec spec;
      if (!expected_shape(name, cfg, spec))
        throw std::invalid_argument("count_params: unrecognized parameter " + name);
      bool ok = spec.cols < 0
                    ? (p.rank() == 1 && p.extents[0] == spec.rows)
                    : (p.rank() == 2 && p.extents[0] == spec.rows && p.extents[1] == spec.cols);
      if (!ok) throw std::invalid_argument("count_params: shape mismatch for " + name);
    }
    total += p.size();
  }
  return total;
}

namespace {

void validate_inputs(const std::vector<int>& tokens, const std::vector<std::uint8_t>& pad,
                     const EncoderConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("encoder_forward: empty sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_len())
    throw std::invalid_argument("encoder_forward: sequence exceeds maximum length " +
                                std::to_string(cfg.max_len()));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size)
      throw std::invalid_argument("encoder_forward: token id out of vocabulary");
  if (!pad.empty() && pad.size() != tokens.size())
    throw std::invalid_argument("encoder_forward: pad mask length mismatch");
}

HiddenStack run_forward(const std::vector<int>& tokens, const std::vector<std::uint8_t>& pad,
                        const ParamStore& model, const EncoderConfig& cfg,
                        const ForwardOptions& opts, EncoderActivations* acts) {
  cfg.validate();
  validate_inputs(tokens, pad, cfg);
  const int n = static_cast<int>(tokens.size());
  const int d = cfg.d_model, dh = cfg.head_dim(), H = cfg.num_heads;
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  int stop = opts.stop_layer < 0 ? cfg.num_layers : opts.stop_layer;
  if (stop > cfg.num_layers)
    throw std::invalid_argument("encoder_forward: stop_layer exceeds depth");

  Vec freqs = yarn_scale(base_frequencies(cfg.rope), cfg.rope);
  RotaryTables tables = make_rotary_tables(n, freqs);

  HiddenStack out;
  out.states.reserve(stop + 1);
  const Mat& embed = model.at("embed.tokens").value;
  Mat h(n, d);
  for (int p = 0; p < n; ++p) h.row(p) = embed.row(tokens[p]);
  out.states.push_back(h);

  if (acts) {
    acts->tokens = tokens;
    acts->pad = pad;
    acts->freqs = freqs;
    acts->states.clear();
    acts->layers.clear();
    acts->states.push_back(h);
    acts->layers.resize(stop);
  }

  Mat scores;  // reused n x n scratch
  for (int l = 0; l < stop; ++l) {
    const std::string p = layer_prefix(l);
    LayerCache local;
    LayerCache& c = acts ? acts->layers[l] : local;

    c.ln1_out = layer_norm(h, model.at(p + "attn.ln.gain").value.row(0).transpose(),
                           model.at(p + "attn.ln.bias").value.row(0).transpose(), cfg.ln_eps,
                           &c.ln1);
    Mat q = c.ln1_out * model.at(p + "attn.wq").value;
    q.rowwise() += model.at(p + "attn.bq").value.row(0);
    Mat k = c.ln1_out * model.at(p + "attn.wk").value;
    k.rowwise() += model.at(p + "attn.bk").value.row(0);
    c.v = c.ln1_out * model.at(p + "attn.wv").value;
    c.v.rowwise() += model.at(p + "attn.bv").value.row(0);
    for (int head = 0; head < H; ++head) {
      rotate_rows_inplace(q.middleCols(head * dh, dh), tables);
      rotate_rows_inplace(k.middleCols(head * dh, dh), tables);
    }
    c.q_rot = std::move(q);
    c.k_rot = std::move(k);

    c.attn_concat.resize(n, d);
    for (int head = 0; head < H; ++head) {
      scores.noalias() = c.q_rot.middleCols(head * dh, dh) *
                         c.k_rot.middleCols(head * dh, dh).transpose();
      scores *= scale;
      if (!pad.empty())
        for (int j = 0; j < n; ++j)
          if (pad[j]) scores.col(j).setConstant(kMaskedScore);
      softmax_rows_inplace(scores);
      c.attn_concat.middleCols(head * dh, dh).noalias() =
          scores * c.v.middleCols(head * dh, dh);
    }
    Mat attn_out = c.attn_concat * model.at(p + "attn.wo").value;
    attn_out.rowwise() += model.at(p + "attn.bo").value.row(0);
    h += attn_out;

    c.ln2_out = layer_norm(h, model.at(p + "ffn.ln.gain").value.row(0).transpose(),
                           model.at(p + "ffn.ln.bias").value.row(0).transpose(), cfg.ln_eps,
                           &c.ln2);
    c.ffn_pre = c.ln2_out * model.at(p + "ffn.w1").value;
    c.ffn_pre.rowwise() += model.at(p + "ffn.b1").value.row(0);
    c.ffn_act = gelu(c.ffn_pre);
    Mat ffn_out = c.ffn_act * model.at(p + "ffn.w2").value;
    ffn_out.rowwise() += model.at(p + "ffn.b2").value.row(0);
    h += ffn_out;

    out.states.push_back(h);
    if (acts) acts->states.push_back(h);
    if (opts.flops) opts.flops->add(layer_flops(cfg, n));
  }

  check_finite(out.states.back(), "encoder hidden state");
  if (opts.want_mlm_logits) {
    if (stop != cfg.num_layers)
      throw std::invalid_argument("encoder_forward: mlm logits require a full-depth pass");
    out.mlm_logits = head_forward(out.states.back(), "mlm_head", model, cfg, nullptr, opts.flops);
  }
  return out;
}

}  // namespace

HiddenStack encoder_forward(const std::vector<int>& tokens, const std::vector<std::uint8_t>& pad,
                            const ParamStore& model, const EncoderConfig& cfg,
                            const ForwardOptions& opts) {
  return run_forward(tokens, pad, model, cfg, opts, nullptr);
}

HiddenStack encoder_forward_cached(const std::vector<int>& tokens,
                                   const std::vector<std::uint8_t>& pad, const ParamStore& model,
                                   const EncoderConfig& cfg, EncoderActivations& acts,
                                   const ForwardOptions& opts) {
  return run_forward(tokens, pad, model, cfg, opts, &acts);
}

void encoder_backward(const Mat& d_hL, const EncoderActivations& acts, ParamStore& model,
                      const EncoderConfig& cfg) {
  const int n = static_cast<int>(acts.tokens.size());
  const int d = cfg.d_model, dh = cfg.head_dim(), H = cfg.num_heads;
  const int L = static_cast<int>(acts.layers.size());
  if (d_hL.rows() != n || d_hL.cols() != d)
    throw std::invalid_argument("encoder_backward: gradient shape mismatch");
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  RotaryTables tables = make_rotary_tables(n, acts.freqs);

  Mat d_h = d_hL;
  Mat probs, d_probs;  // reused n x n scratches
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = layer_prefix(l);
    const LayerCache& c = acts.layers[l];

    // ffn block: h_out = h_mid + W2 gelu(W1 ln2(h_mid) + b1) + b2
    Param& w2 = model.at(p + "ffn.w2");
    w2.grad.noalias() += c.ffn_act.transpose() * d_h;
    model.at(p + "ffn.b2").grad.row(0) += d_h.colwise().sum();
    Mat d_act = d_h * w2.value.transpose();
    Mat d_pre = gelu_backward(c.ffn_pre, d_act);
    Param& w1 = model.at(p + "ffn.w1");
    w1.grad.noalias() += c.ln2_out.transpose() * d_pre;
    model.at(p + "ffn.b1").grad.row(0) += d_pre.colwise().sum();
    Mat d_ln2 = d_pre * w1.value.transpose();
    {
      Param& g = model.at(p + "ffn.ln.gain");
      Param& b = model.at(p + "ffn.ln.bias");
      Vec dgain = Vec::Zero(d), dbias = Vec::Zero(d);
      Mat dx = layer_norm_backward(c.ln2, g.value.row(0).transpose(), d_ln2, dgain, dbias);
      g.grad.row(0) += dgain.transpose();
      b.grad.row(0) += dbias.transpose();
      d_h += dx;  // now gradient w.r.t. h_mid
    }

    // attention block: h_mid = h_in + Wo concat(heads) + bo
    Param& wo = model.at(p + "attn.wo");
    wo.grad.noalias() += c.attn_concat.transpose() * d_h;
    model.at(p + "attn.bo").grad.row(0) += d_h.colwise().sum();
    Mat d_ctx = d_h * wo.value.transpose();

    Mat d_q(n, d), d_k(n, d), d_v(n, d);
    for (int head = 0; head < H; ++head) {
      auto q_h = c.q_rot.middleCols(head * dh, dh);
      auto k_h = c.k_rot.middleCols(head * dh, dh);
      auto v_h = c.v.middleCols(head * dh, dh);
      probs.noalias() = q_h * k_h.transpose();
      probs *= scale;
      if (!acts.pad.empty())
        for (int j = 0; j < n; ++j)
          if (acts.pad[j]) probs.col(j).setConstant(kMaskedScore);
      softmax_rows_inplace(probs);

      auto d_ctx_h = d_ctx.middleCols(head * dh, dh);
      d_v.middleCols(head * dh, dh).noalias() = probs.transpose() * d_ctx_h;
      d_probs.noalias() = d_ctx_h * v_h.transpose();
      // softmax backward row-wise: dS = P (dP - sum(dP P))
      for (int r = 0; r < n; ++r) {
        Scalar dot = probs.row(r).dot(d_probs.row(r));
        d_probs.row(r).array() -= dot;
        d_probs.row(r).array() *= probs.row(r).array();
      }
      d_probs *= scale;
      d_q.middleCols(head * dh, dh).noalias() = d_probs * k_h;
      d_k.middleCols(head * dh, dh).noalias() = d_probs.transpose() * q_h;
    }
    for (int head = 0; head < H; ++head) {
      rotate_rows_inplace(d_q.middleCols(head * dh, dh), tables, false);
      rotate_rows_inplace(d_k.middleCols(head * dh, dh), tables, false);
    }

    Param& wq = model.at(p + "attn.wq");
    Param& wk = model.at(p + "attn.wk");
    Param& wv = model.at(p + "attn.wv");
    wq.grad.noalias() += c.ln1_out.transpose() * d_q;
    wk.grad.noalias() += c.ln1_out.transpose() * d_k;
    wv.grad.noalias() += c.ln1_out.transpose() * d_v;
    model.at(p + "attn.bq").grad.row(0) += d_q.colwise().sum();
    model.at(p + "attn.bk").grad.row(0) += d_k.colwise().sum();
    model.at(p + "attn.bv").grad.row(0) += d_v.colwise().sum();
    Mat d_ln1 = d_q * wq.value.transpose();
    d_ln1.noalias() += d_k * wk.value.transpose();
    d_ln1.noalias() += d_v * wv.value.transpose();
    {
      Param& g = model.at(p + "attn.ln.gain");
      Param& b = model.at(p + "attn.ln.bias");
      Vec dgain = Vec::Zero(d), dbias = Vec::Zero(d);
      Mat dx = layer_norm_backward(c.ln1, g.value.row(0).transpose(), d_ln1, dgain, dbias);
      g.grad.row(0) += dgain.transpose();
      b.grad.row(0) += dbias.transpose();
      d_h += dx;  // gradient w.r.t. h_in
    }
  }

  Param& embed = model.at("embed.tokens");
  for (int p = 0; p < n; ++p) embed.grad.row(acts.tokens[p]) += d_h.row(p);
}

Mat head_forward(const Mat& h_last, const std::string& head, const ParamStore& model,
                 const EncoderConfig& cfg, HeadCache* cache, FlopCounter* flops) {
  HeadCache local;
  HeadCache& c = cache ? *cache : local;
  c.normed = layer_norm(h_last, model.at("final_norm.gain").value.row(0).transpose(),
                        model.at("final_norm.bias").value.row(0).transpose(), cfg.ln_eps, &c.ln);
  const Param& w = model.at(head + ".w");
  Mat logits = c.normed * w.value;
  logits.rowwise() += model.at(head + ".b").value.row(0);
  if (flops) {
    std::uint64_t n = h_last.rows(), d = h_last.cols(), o = w.value.cols();
    flops->add(8 * n * d + 2 * n * d * o + n * o);
  }
  check_finite(logits, "head logits");
  return logits;
}

Mat head_backward(const Mat& d_logits, const std::string& head, const HeadCache& cache,
                  ParamStore& model, const EncoderConfig& cfg) {
  Param& w = model.at(head + ".w");
  w.grad.noalias() += cache.normed.transpose() * d_logits;
  model.at(head + ".b").grad.row(0) += d_logits.colwise().sum();
  Mat d_normed = d_logits * w.value.transpose();
  Param& g = model.at("final_norm.gain");
  Param& b = model.at("final_norm.bias");
  Vec dgain = Vec::Zero(cfg.d_model), dbias = Vec::Zero(cfg.d_model);
  Mat dx = layer_norm_backward(cache.ln, g.value.row(0).transpose(), d_normed, dgain, dbias);
  g.grad.row(0) += dgain.transpose();
  b.grad.row(0) += dbias.transpose();
  return dx;
}

Mat attention_probs(const EncoderActivations& acts, const EncoderConfig& cfg, int layer,
                    int head) {
  if (layer < 0 || layer >= static_cast<int>(acts.layers.size()))
    throw std::invalid_argument("attention_probs: layer out of range");
  if (head < 0 || head >= cfg.num_heads)
    throw std::invalid_argument("attention_probs: head out of range");
  const LayerCache& c = acts.layers[layer];
  const int n = static_cast<int>(acts.tokens.size());
  const int dh = cfg.head_dim();
  const Scalar scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat s = c.q_rot.middleCols(head * dh, dh) * c.k_rot.middleCols(head * dh, dh).transpose();
  s *= scale;
  if (!acts.pad.empty())
    for (int j = 0; j < n; ++j)
      if (acts.pad[j]) s.col(j).setConstant(kMaskedScore);
  softmax_rows_inplace(s);
  return s;
}

std::uint64_t forward_flops(const EncoderConfig& cfg, int n, int layers) {
  std::uint64_t total = 0;
  for (int l = 0; l < layers; ++l) total += layer_flops(cfg, n);
  return total;
}

}  // namespace lchd
