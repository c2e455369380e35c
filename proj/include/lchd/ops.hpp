#pragma once

#include "lchd/types.hpp"

namespace lchd {

// GELU in the exact erf form: 0.5 x (1 + erf(x / sqrt(2))).
// The activation variant is recorded in checkpoint headers as "erf".
Scalar gelu_scalar(Scalar x);
Mat gelu(const Mat& x);

// dy * gelu'(x), with gelu'(x) = Phi(x) + x phi(x)
Mat gelu_backward(const Mat& x, const Mat& dy);

// Per-row statistics needed to rerun the normalization in backward without
// keeping the raw input: the normalized (pre-affine) rows and 1/std per row.
struct LayerNormCache {
  Mat hat;    // (x - mean) * rstd
  Vec rstd;   // per row
};

// Normalizes each row of x to zero mean and unit variance (biased variance,
// stabilized by eps), then applies elementwise gain and bias.
Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, Scalar eps,
               LayerNormCache* cache = nullptr);

// Returns dx; accumulates parameter gradients into dgain/dbias.
Mat layer_norm_backward(const LayerNormCache& cache, const Vec& gain, const Mat& dy,
                        Vec& dgain, Vec& dbias);

// Row-wise stable softmax.
void softmax_rows_inplace(Mat& x);
Mat softmax_rows(const Mat& x);
Vec softmax(const Vec& logits);

// loss = -log softmax(logits)[target]; grad = softmax(logits) - one_hot(target)
struct ScalarLossGrad {
  double loss;
  Vec grad;
};
ScalarLossGrad softmax_cross_entropy(const Vec& logits, Index target);

// Throws std::runtime_error naming `what` if any entry is NaN or infinite.
void check_finite(const Mat& m, const char* what);

}  // namespace lchd
