// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace dofen {

std::uint64_t mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

CounterRng CounterRng::stream(std::uint64_t seed, std::string_view name) {
  return CounterRng(mix64(mix64(seed) ^ fnv1a64(name)));
}

CounterRng CounterRng::split(std::string_view name) const {
  return CounterRng(mix64(key_ ^ fnv1a64(name)));
}

CounterRng CounterRng::split(std::uint64_t index) const {
  return CounterRng(mix64(key_ + mix64(index ^ 0x5851f42d4c957f2dULL)));
}

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t n = counter_++;
  return mix64(key_ ^ mix64(n));
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  // Rejection on the top of the range keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::vector<std::uint32_t> random_permutation(std::size_t n, CounterRng& rng) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  rng.shuffle(perm);
  return perm;
}

}  // namespace dofen
