#pragma once

#include <cstdint>
#include <functional>

#include "lchd/tensor.hpp"

namespace lchd {

// Central-difference comparison of analytic gradients against finite
// differences. Call with analytic gradients already accumulated in the grad
// slots of `store`; `f` recomputes the scalar loss from current values and
// must be deterministic (it is evaluated twice up front and the results must
// agree bitwise).
//
// Per tensor the error is || fd - g ||_2 / max(||fd||_2 + ||g||_2, floor);
// the returned value is the worst tensor. Comparing whole-tensor norms keeps
// single-precision finite-difference noise on near-zero components from
// dominating the verdict.
//
// max_components_per_tensor = 0 checks every component; a positive value
// checks a deterministic random subset of that size per tensor.
double grad_check(const std::function<double()>& f, ParamStore& store,
                  double eps = 1e-2, Index max_components_per_tensor = 0,
                  std::uint64_t subsample_seed = 0);

}  // namespace lchd
