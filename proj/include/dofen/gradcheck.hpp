// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dofen/tensor.hpp"

namespace dofen::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences. `loss_fn` must build a fresh graph on the given tape and be
// deterministic (fixed rng streams) so repeated evaluations agree.
template <class T>
GradCheckResult finite_difference_check(
    const std::function<Tensor<T>(Tape<T>&)>& loss_fn, std::vector<Tensor<T>> params,
    double h = 1e-5, const std::vector<std::string>& names = {}) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.mutable_grad();
    p.zero_grad();
  }
  {
    Tape<T> tape;
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto evaluate = [&] {
    auto tape = Tape<T>::inference();
    return static_cast<double>(loss_fn(tape).item());
  };

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<T> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(saved + h);
      const double up = evaluate();
      values[i] = static_cast<T>(saved - h);
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error || std::isnan(rel)) {
        result.max_relative_error = std::isnan(rel) ? INFINITY : rel;
        result.worst_parameter = pi < names.size() ? names[pi] : std::to_string(pi);
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace dofen::ad
