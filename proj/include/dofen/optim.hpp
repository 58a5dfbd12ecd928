// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dofen/tensor.hpp"

namespace dofen {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One AdamW update of a flat parameter block at step t (t >= 1):
//   theta <- theta * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  const AdamWConfig& config);

template <class T>
class AdamW {
 public:
  AdamW(const AdamWConfig& config, std::vector<std::pair<std::string, ad::Tensor<T>>> params);

  // Applies one update from the parameters' current gradients. Throws
  // NumericError naming the parameter if any gradient is non-finite; no
  // parameter is modified in that case.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<std::pair<std::string, ad::Tensor<T>>> params_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace dofen
