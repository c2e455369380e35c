#pragma once

#include <cmath>

#include "lchd/types.hpp"

namespace lchd {

// Rotary position embedding with frequency-selective interpolation for
// context extension. Frequencies whose wavelength fits comfortably inside the
// original training window are left untouched; frequencies that complete at
// most ramp_low rotations over that window are fully rescaled by 1/s; the
// band in between is blended linearly.
struct RopeConfig {
  int head_dim = 16;
  Scalar theta_base = 10000.0f;
  int orig_max_len = 512;
  Scalar scale_s = 1.0f;
  Scalar ramp_low = 1.0f;
  Scalar ramp_high = 32.0f;

  int extended_max_len() const {
    return static_cast<int>(std::lround(static_cast<double>(orig_max_len) * scale_s));
  }
  void validate() const;
};

// theta_i = theta_base^(-2i/head_dim) for pair index i in [0, head_dim/2)
Vec base_frequencies(const RopeConfig& cfg);

// Applies the interpolation ramp to a frequency vector. With scale_s = 1 the
// output equals the input exactly.
Vec yarn_scale(const Vec& freqs, const RopeConfig& cfg);

// Rotates consecutive pairs of v (length head_dim) by position * freqs[i].
Vec apply_rotary(const Vec& v, int position, const Vec& freqs);

// Per-position cos/sin tables for rotating whole n x head_dim blocks.
struct RotaryTables {
  Mat cos;  // n x head_dim/2
  Mat sin;
};
RotaryTables make_rotary_tables(int n, const Vec& freqs);

// Rotates each row r of x (n x head_dim) by the angles of position r.
// forward = false applies the inverse rotation, which is the transpose map
// used when back-propagating through the rotation.
void rotate_rows_inplace(Eigen::Ref<Mat> x, const RotaryTables& tables, bool forward = true);

}  // namespace lchd
