#include "lchd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lchd/rng.hpp"

namespace lchd {

double grad_check(const std::function<double()>& f, ParamStore& store, double eps,
                  Index max_components_per_tensor, std::uint64_t subsample_seed) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  double f0 = f();
  double f1 = f();
  if (f0 != f1)
    throw std::runtime_error("grad_check: function is not deterministic under fixed inputs");

  double worst = 0.0;
  std::uint64_t tensor_idx = 0;
  for (const auto& name : store.names()) {
    Param& p = store.at(name);
    const Index total = p.size();
    std::vector<Index> picks;
    if (max_components_per_tensor > 0 && total > max_components_per_tensor) {
      Rng rng(mix_seed(subsample_seed, tensor_idx));
      std::vector<Index> all(total);
      for (Index i = 0; i < total; ++i) all[i] = i;
      for (Index i = 0; i < max_components_per_tensor; ++i) {
        Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(total - i)));
        std::swap(all[i], all[j]);
      }
      picks.assign(all.begin(), all.begin() + max_components_per_tensor);
      std::sort(picks.begin(), picks.end());
    } else {
      picks.resize(total);
      for (Index i = 0; i < total; ++i) picks[i] = i;
    }

    double diff_sq = 0.0, fd_sq = 0.0, g_sq = 0.0;
    Scalar* vals = p.value.data();
    const Scalar* grads = p.grad.data();
    for (Index i : picks) {
      Scalar orig = vals[i];
      vals[i] = static_cast<Scalar>(orig + eps);
      double fp = f();
      vals[i] = static_cast<Scalar>(orig - eps);
      double fm = f();
      vals[i] = orig;
      double fd = (fp - fm) / (2.0 * eps);
      double g = grads[i];
      diff_sq += (fd - g) * (fd - g);
      fd_sq += fd * fd;
      g_sq += g * g;
    }
    double denom = std::max(std::sqrt(fd_sq) + std::sqrt(g_sq), 1e-12);
    worst = std::max(worst, std::sqrt(diff_sq) / denom);
    ++tensor_idx;
  }
  return worst;
}

}  // namespace lchd
