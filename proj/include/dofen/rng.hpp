// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace dofen {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (key, n). Streams split by name don't consume each other's draws.
class CounterRng {
 public:
  CounterRng() = default;
  CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  // Independent stream identified by (seed, name).
  static CounterRng stream(std::uint64_t seed, std::string_view name);

  // Child stream; does not advance this stream.
  CounterRng split(std::string_view name) const;
  CounterRng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller; consumes two draws.
  double normal();
  // Unbiased integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

  template <class Container>
  void shuffle(Container& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Random permutation of 0..n-1.
std::vector<std::uint32_t> random_permutation(std::size_t n, CounterRng& rng);

}  // namespace dofen
