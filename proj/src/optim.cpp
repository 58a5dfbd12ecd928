// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/optim.hpp"

#include <cmath>

#include "dofen/error.hpp"

namespace dofen {

template <class T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  const AdamWConfig& c) {
  if (t == 0) throw Error("adamw step count must start at 1");
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw ShapeError("adamw state size does not match the parameter");
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const double decay = 1.0 - c.learning_rate * c.weight_decay;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double step = c.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
    theta[i] = static_cast<T>(static_cast<double>(theta[i]) * decay - step);
  }
}

template <class T>
AdamW<T>::AdamW(const AdamWConfig& config, std::vector<std::pair<std::string, ad::Tensor<T>>> params)
    : config_(config), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.emplace_back(p.second.size(), T(0));
    v_.emplace_back(p.second.size(), T(0));
  }
}

template <class T>
void AdamW<T>::step() {
  for (auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i]))) {
        throw NumericError("non-finite gradient in " + name + "[" + std::to_string(i) + "]");
      }
    }
  }
  ++t_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    // Parameters untouched by this step's graph still decay and advance their moments with g = 0.
    std::vector<T> zeros;
    std::span<const T> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.size(), T(0));
      g = zeros;
    }
    adamw_update<T>(p.mutable_data(), g, m_[k], v_[k], t_, config_);
  }
}

template <class T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.second.zero_grad();
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::uint64_t, const AdamWConfig&);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                   std::span<double>, std::uint64_t, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace dofen
