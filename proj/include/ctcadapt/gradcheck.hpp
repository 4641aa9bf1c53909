// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ctcadapt/tensor.hpp"

namespace ctcadapt {

// Compares analytic gradients of `loss_fn` w.r.t. `params` against central
// differences (f(x+h) - f(x-h)) / 2h. Returns the max relative error, with
// denominator max(|analytic|, |numeric|, 1e-8). Parameter values are restored.
inline double finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step h must be positive");

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn().item();
      values[i] = saved - h;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace ctcadapt
