#pragma once

#include <cmath>
#include <functional>

#include "avcap/tensor.hpp"

namespace avcap {

// Central-difference verification of reverse-mode gradients.
//
// `build` must be a pure function of the checked tensor's current values
// (dropout disabled, no other mutable state) returning a scalar loss. Returns
// the maximum over coordinates of |analytic - numeric| / max(1, |analytic|).
// Run with S = double; float round-off swamps the comparison.
template <typename S, typename F>
double grad_check(F&& build, TensorT<S>& x, double eps = 1e-5) {
  if (!x.requires_grad || !x.grad) throw ContractError("grad_check: tensor must require gradients");
  x.zero_grad();
  {
    TensorT<S> loss = build(static_cast<const TensorT<S>&>(x));
    if (loss.numel() != 1) throw ContractError("grad_check: builder must return a scalar");
    backward(loss);
  }
  std::vector<S> analytic = *x.grad;

  double worst = 0.0;
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const S saved = (*x.data)[i];
    double plus, minus;
    {
      NoGradGuard ng;
      (*x.data)[i] = saved + static_cast<S>(eps);
      plus = static_cast<double>((*build(static_cast<const TensorT<S>&>(x)).data)[0]);
      (*x.data)[i] = saved - static_cast<S>(eps);
      minus = static_cast<double>((*build(static_cast<const TensorT<S>&>(x)).data)[0]);
      (*x.data)[i] = saved;
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = static_cast<double>(analytic[i]);
    if (!std::isfinite(numeric) || !std::isfinite(a)) throw NumericError("grad_check: non-finite value encountered");
    const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace avcap
