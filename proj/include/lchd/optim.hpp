#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lchd/tensor.hpp"

namespace lchd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a ParamStore, optionally restricted to names accepted by a
// filter (used when only a parameter subset is trainable, e.g. exit
// adapters over a frozen backbone). Moment slots bind to the names present
// at construction.
class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg,
       std::function<bool(const std::string&)> filter = nullptr)
      : params_(params), cfg_(cfg) {
    for (const auto& name : params.names()) {
      if (filter && !filter(name)) continue;
      const Param& p = params.at(name);
      names_.push_back(name);
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
    if (names_.empty()) throw std::invalid_argument("Adam: nothing to optimize");
  }

  // One update from current gradients. lr_scale multiplies the base rate,
  // which is how warmup schedules drive the optimizer.
  void step(double lr_scale = 1.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const double lr = cfg_.lr * lr_scale;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      Param& p = params_.at(names_[i]);
      Mat& m = m_[i];
      Mat& v = v_[i];
      m = static_cast<Scalar>(cfg_.beta1) * m + static_cast<Scalar>(1.0 - cfg_.beta1) * p.grad;
      v = static_cast<Scalar>(cfg_.beta2) * v +
          static_cast<Scalar>(1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      const Scalar denom_eps = static_cast<Scalar>(cfg_.eps);
      const Scalar rate = static_cast<Scalar>(lr / bc1);
      const Scalar vscale = static_cast<Scalar>(1.0 / bc2);
      p.value.array() -=
          rate * m.array() / ((v.array() * vscale).sqrt() + denom_eps);
    }
  }

  int steps_taken() const { return t_; }

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

// Linear warmup to the base rate, then constant.
struct WarmupConstantSchedule {
  int warmup_steps = 0;

  double scale_at(int step) const {
    if (warmup_steps <= 0) return 1.0;
    if (step + 1 >= warmup_steps) return 1.0;
    return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }

  static WarmupConstantSchedule from_ratio(double warmup_ratio, int total_steps) {
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0)
      throw std::invalid_argument("warmup_ratio outside [0, 1]");
    WarmupConstantSchedule s;
    s.warmup_steps = static_cast<int>(std::ceil(warmup_ratio * total_steps));
    return s;
  }
};

}  // namespace lchd
