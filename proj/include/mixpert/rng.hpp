// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mixpert {

// Mixes a list of integers into one 64-bit seed (splitmix64 chain).
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

// Platform-stable random source. std::mt19937_64 has a fully specified output
// sequence; the distributions below avoid the implementation-defined ones in
// <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mixpert
