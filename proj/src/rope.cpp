#include "lchd/rope.hpp"

#include <numbers>
#include <stdexcept>

namespace lchd {

void RopeConfig::validate() const {
  if (head_dim <= 0 || head_dim % 2 != 0)
    throw std::invalid_argument("RopeConfig: head_dim must be positive and even");
  if (theta_base <= 1.0f) throw std::invalid_argument("RopeConfig: theta_base must exceed 1");
  if (orig_max_len <= 0) throw std::invalid_argument("RopeConfig: orig_max_len must be positive");
  if (scale_s < 1.0f) throw std::invalid_argument("RopeConfig: scale_s must be >= 1");
  if (!(ramp_low < ramp_high))
    throw std::invalid_argument("RopeConfig: ramp_low must be below ramp_high");
}

Vec base_frequencies(const RopeConfig& cfg) {
  cfg.validate();
  const int half = cfg.head_dim / 2;
  Vec f(half);
  for (int i = 0; i < half; ++i) {
    double expo = -2.0 * static_cast<double>(i) / static_cast<double>(cfg.head_dim);
    f[i] = static_cast<Scalar>(std::pow(static_cast<double>(cfg.theta_base), expo));
  }
  return f;
}

Vec yarn_scale(const Vec& freqs, const RopeConfig& cfg) {
  cfg.validate();
  const double two_pi = 2.0 * std::numbers::pi;
  Vec out(freqs.size());
  for (Index i = 0; i < freqs.size(); ++i) {
    double rotations = static_cast<double>(cfg.orig_max_len) * static_cast<double>(freqs[i]) / two_pi;
    double w;
    if (rotations <= cfg.ramp_low) {
      w = 1.0;
    } else if (rotations >= cfg.ramp_high) {
      w = 0.0;
    } else {
      w = (static_cast<double>(cfg.ramp_high) - rotations) /
          (static_cast<double>(cfg.ramp_high) - static_cast<double>(cfg.ramp_low));
    }
    out[i] = static_cast<Scalar>(static_cast<double>(freqs[i]) *
                                 (1.0 - w + w / static_cast<double>(cfg.scale_s)));
  }
  return out;
}

Vec apply_rotary(const Vec& v, int position, const Vec& freqs) {
  if (v.size() != 2 * freqs.size())
    throw std::invalid_argument("apply_rotary: vector length must be twice the frequency count");
  Vec out(v.size());
  for (Index i = 0; i < freqs.size(); ++i) {
    double angle = static_cast<double>(position) * static_cast<double>(freqs[i]);
    Scalar c = static_cast<Scalar>(std::cos(angle));
    Scalar s = static_cast<Scalar>(std::sin(angle));
    Scalar x0 = v[2 * i], x1 = v[2 * i + 1];
    out[2 * i] = x0 * c - x1 * s;
    out[2 * i + 1] = x0 * s + x1 * c;
  }
  return out;
}

RotaryTables make_rotary_tables(int n, const Vec& freqs) {
  RotaryTables t;
  t.cos.resize(n, freqs.size());
  t.sin.resize(n, freqs.size());
  for (int p = 0; p < n; ++p) {
    for (Index i = 0; i < freqs.size(); ++i) {
      double angle = static_cast<double>(p) * static_cast<double>(freqs[i]);
      t.cos(p, i) = static_cast<Scalar>(std::cos(angle));
      t.sin(p, i) = static_cast<Scalar>(std::sin(angle));
    }
  }
  return t;
}

void rotate_rows_inplace(Eigen::Ref<Mat> x, const RotaryTables& tables, bool forward) {
  const Index n = x.rows();
  const Index half = tables.cos.cols();
  if (x.cols() != 2 * half) throw std::invalid_argument("rotate_rows_inplace: width mismatch");
  if (n > tables.cos.rows()) throw std::invalid_argument("rotate_rows_inplace: tables too short");
  for (Index r = 0; r < n; ++r) {
    for (Index i = 0; i < half; ++i) {
      Scalar c = tables.cos(r, i);
      Scalar s = forward ? tables.sin(r, i) : -tables.sin(r, i);
      Scalar x0 = x(r, 2 * i), x1 = x(r, 2 * i + 1);
      x(r, 2 * i) = x0 * c - x1 * s;
      x(r, 2 * i + 1) = x0 * s + x1 * c;
    }
  }
}

}  // namespace lchd
