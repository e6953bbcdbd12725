#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "expres/tensor.hpp"

namespace expres {

// Sub-seed for a labelled consumer: splitmix64(base ^ fnv1a(label) ^ index mix).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Normal(0, std) resampled until within two standard deviations.
  float trunc_normal(float std);
  std::vector<std::size_t> permutation(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor trunc_normal_tensor(Dims dims, float std, Rng& rng);
Tensor uniform_tensor(Dims dims, float lo, float hi, Rng& rng);

}  // namespace expres
