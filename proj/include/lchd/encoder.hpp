#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lchd/ops.hpp"
#include "lchd/rope.hpp"
#include "lchd/tensor.hpp"

namespace lchd {

struct EncoderConfig {
  int num_layers = 6;
  int d_model = 64;
  int num_heads = 4;
  int d_ffn = 256;
  int vocab_size = 260;
  RopeConfig rope;
  Scalar ln_eps = 1e-5f;

  int head_dim() const { return d_model / num_heads; }
  int max_len() const { return rope.extended_max_len(); }
  void validate() const;
};

// Running tally of floating-point operations, filled in by the forward pass
// when attached. Used to verify that early exits save compute proportionally.
struct FlopCounter {
  std::uint64_t flops = 0;
  void add(std::uint64_t n) { flops += n; }
};

// Hidden states h_0..h_l produced by a forward pass; h_0 is the embedding
// output. mlm_logits is filled only when requested.
struct HiddenStack {
  std::vector<Mat> states;
  Mat mlm_logits;
};

struct ForwardOptions {
  int stop_layer = -1;          // -1 runs every layer
  bool want_mlm_logits = false;
  FlopCounter* flops = nullptr;
};

// Per-layer activations retained for the backward pass. Attention
// probabilities are deliberately absent; they are recomputed from the rotated
// queries/keys to keep peak memory at one heads-sized scratch.
struct LayerCache {
  LayerNormCache ln1;
  Mat ln1_out;       // n x d
  Mat q_rot, k_rot;  // n x d, heads concatenated, rotation applied
  Mat v;             // n x d
  Mat attn_concat;   // n x d, pre output projection
  LayerNormCache ln2;
  Mat ln2_out;       // n x d
  Mat ffn_pre;       // n x d_ffn
  Mat ffn_act;       // n x d_ffn
};

struct EncoderActivations {
  std::vector<int> tokens;
  std::vector<std::uint8_t> pad;      // 1 marks padding; empty means none
  Vec freqs;                          // scaled frequencies used by this pass
  std::vector<Mat> states;            // h_0..h_L
  std::vector<LayerCache> layers;
};

// Builds all backbone parameters (embedding, layers, final norm, mlm head)
// with seeded gaussian init. The token detection head and exit adapters are
// added later by their own training stages.
ParamStore init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

// Adds the 2-class token head (zero init) if absent.
void add_detection_head(ParamStore& model, const EncoderConfig& cfg);

// Sums parameter counts; validates every recognized tensor's shape against
// the config and rejects unknown names.
std::int64_t count_params(const ParamStore& model, const EncoderConfig& cfg);

// Forward pass. pad entries flagged 1 are excluded from attention as keys.
// With opts.stop_layer = l, states holds h_0..h_l and deeper layers never
// run; the states produced are bitwise identical to the prefix of a full run.
HiddenStack encoder_forward(const std::vector<int>& tokens,
                            const std::vector<std::uint8_t>& pad,
                            const ParamStore& model, const EncoderConfig& cfg,
                            const ForwardOptions& opts = {});

// Same computation, also filling `acts` for encoder_backward.
HiddenStack encoder_forward_cached(const std::vector<int>& tokens,
                                   const std::vector<std::uint8_t>& pad,
                                   const ParamStore& model, const EncoderConfig& cfg,
                                   EncoderActivations& acts,
                                   const ForwardOptions& opts = {});

// Accumulates parameter gradients given d_hL, the loss gradient with respect
// to the deepest state in `acts`.
void encoder_backward(const Mat& d_hL, const EncoderActivations& acts,
                      ParamStore& model, const EncoderConfig& cfg);

// Affine head over the shared final norm. `head` selects the parameter
// prefix: "mlm_head" (d -> vocab) or "det_head" (d -> 2).
struct HeadCache {
  LayerNormCache ln;
  Mat normed;
};
Mat head_forward(const Mat& h_last, const std::string& head, const ParamStore& model,
                 const EncoderConfig& cfg, HeadCache* cache = nullptr,
                 FlopCounter* flops = nullptr);
// Returns d_h_last; accumulates head and final-norm gradients.
Mat head_backward(const Mat& d_logits, const std::string& head, const HeadCache& cache,
                  ParamStore& model, const EncoderConfig& cfg);

// Recomputes the post-softmax attention matrix of one layer/head from cached
// activations. Test and inspection hook.
Mat attention_probs(const EncoderActivations& acts, const EncoderConfig& cfg, int layer,
                    int head);

// Flops for a forward pass of `layers` layers at length n (no heads).
std::uint64_t forward_flops(const EncoderConfig& cfg, int n, int layers);

}  // namespace lchd
