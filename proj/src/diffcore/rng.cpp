#include "expres/rng.hpp"

#include <cmath>
#include <numeric>

namespace expres {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(base ^ h) + index);
}

float Rng::trunc_normal(float std) {
  for (;;) {
    const double z = normal();
    if (std::fabs(z) <= 2.0) return static_cast<float>(z * std);
  }
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  // Fisher-Yates with our own index draws so the order does not depend on std::shuffle.
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
  return p;
}

Tensor trunc_normal_tensor(Dims dims, float std, Rng& rng) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = rng.trunc_normal(std);
  return t;
}

Tensor uniform_tensor(Dims dims, float lo, float hi, Rng& rng) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace expres
