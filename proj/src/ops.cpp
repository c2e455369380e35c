#include "lchd/ops.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lchd {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Scalar gelu_scalar(Scalar x) {
  double xd = x;
  return static_cast<Scalar>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
}

Mat gelu(const Mat& x) {
  Mat y(x.rows(), x.cols());
  const Scalar* src = x.data();
  Scalar* dst = y.data();
  for (Index i = 0; i < x.size(); ++i) dst[i] = gelu_scalar(src[i]);
  return y;
}

Mat gelu_backward(const Mat& x, const Mat& dy) {
  if (x.rows() != dy.rows() || x.cols() != dy.cols())
    throw std::invalid_argument("gelu_backward: shape mismatch");
  Mat dx(x.rows(), x.cols());
  const Scalar* xs = x.data();
  const Scalar* gs = dy.data();
  Scalar* ds = dx.data();
  for (Index i = 0; i < x.size(); ++i) {
    double xd = xs[i];
    double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
    ds[i] = static_cast<Scalar>(gs[i] * (cdf + xd * pdf));
  }
  return dx;
}

Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, Scalar eps,
               LayerNormCache* cache) {
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw std::invalid_argument("layer_norm: gain/bias length does not match last axis");
  const Index n = x.rows(), d = x.cols();
  Mat out(n, d);
  Mat hat(n, d);
  Vec rstd(n);
  for (Index r = 0; r < n; ++r) {
    double mean = 0.0;
    for (Index c = 0; c < d; ++c) mean += x(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Index c = 0; c < d; ++c) {
      double t = x(r, c) - mean;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<Scalar>(rs);
    for (Index c = 0; c < d; ++c) {
      Scalar h = static_cast<Scalar>((x(r, c) - mean) * rs);
      hat(r, c) = h;
      out(r, c) = h * gain[c] + bias[c];
    }
  }
  if (cache) {
    cache->hat = std::move(hat);
    cache->rstd = std::move(rstd);
  }
  return out;
}

Mat layer_norm_backward(const LayerNormCache& cache, const Vec& gain, const Mat& dy,
                        Vec& dgain, Vec& dbias) {
  const Mat& hat = cache.hat;
  const Index n = hat.rows(), d = hat.cols();
  if (dy.rows() != n || dy.cols() != d)
    throw std::invalid_argument("layer_norm_backward: shape mismatch");
  Mat dx(n, d);
  for (Index r = 0; r < n; ++r) {
    double sum_dh = 0.0, sum_dh_hat = 0.0;
    for (Index c = 0; c < d; ++c) {
      double dh = static_cast<double>(dy(r, c)) * gain[c];
      sum_dh += dh;
      sum_dh_hat += dh * hat(r, c);
    }
    double m1 = sum_dh / static_cast<double>(d);
    double m2 = sum_dh_hat / static_cast<double>(d);
    double rs = cache.rstd[r];
    for (Index c = 0; c < d; ++c) {
      double dh = static_cast<double>(dy(r, c)) * gain[c];
      dx(r, c) = static_cast<Scalar>(rs * (dh - m1 - hat(r, c) * m2));
    }
  }
  for (Index c = 0; c < d; ++c) {
    double dg = 0.0, db = 0.0;
    for (Index r = 0; r < n; ++r) {
      dg += static_cast<double>(dy(r, c)) * hat(r, c);
      db += dy(r, c);
    }
    dgain[c] += static_cast<Scalar>(dg);
    dbias[c] += static_cast<Scalar>(db);
  }
  return dx;
}

void softmax_rows_inplace(Mat& x) {
  for (Index r = 0; r < x.rows(); ++r) {
    Scalar m = x.row(r).maxCoeff();
    double denom = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      double e = std::exp(static_cast<double>(x(r, c)) - static_cast<double>(m));
      x(r, c) = static_cast<Scalar>(e);
      denom += e;
    }
    x.row(r) *= static_cast<Scalar>(1.0 / denom);
  }
}

Mat softmax_rows(const Mat& x) {
  Mat y = x;
  softmax_rows_inplace(y);
  return y;
}

Vec softmax(const Vec& logits) {
  Vec y = logits;
  Scalar m = y.maxCoeff();
  double denom = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    double e = std::exp(static_cast<double>(y[i]) - static_cast<double>(m));
    y[i] = static_cast<Scalar>(e);
    denom += e;
  }
  y *= static_cast<Scalar>(1.0 / denom);
  return y;
}

ScalarLossGrad softmax_cross_entropy(const Vec& logits, Index target) {
  if (target < 0 || target >= logits.size())
    throw std::invalid_argument("softmax_cross_entropy: target out of range");
  Scalar m = logits.maxCoeff();
  double denom = 0.0;
  for (Index i = 0; i < logits.size(); ++i)
    denom += std::exp(static_cast<double>(logits[i]) - static_cast<double>(m));
  double log_denom = std::log(denom);
  double loss = log_denom - (static_cast<double>(logits[target]) - static_cast<double>(m));
  Vec grad(logits.size());
  for (Index i = 0; i < logits.size(); ++i) {
    double p = std::exp(static_cast<double>(logits[i]) - static_cast<double>(m) - log_denom);
    grad[i] = static_cast<Scalar>(p);
  }
  grad[target] -= 1.0f;
  return {loss, std::move(grad)};
}

void check_finite(const Mat& m, const char* what) {
  const Scalar* p = m.data();
  for (Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(p[i]))
      throw std::runtime_error(std::string("non-finite value in ") + what);
  }
}

}  // namespace lchd
