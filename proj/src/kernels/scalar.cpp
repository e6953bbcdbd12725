#include <vector>

#include "expres/kernels.hpp"

namespace expres::kernels::scalar {
namespace {

void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<double> acc;
  acc.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    float* orow = out + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
  }
}

void column_sum(const float* a, std::size_t m, std::size_t n, float* out) {
  thread_local std::vector<double> acc;
  acc.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = a + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += static_cast<double>(row[j]);
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<float>(acc[j]);
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void accumulate(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

}  // namespace

const KernelTable kTable{gemm, column_sum, add, accumulate, scale};

}  // namespace expres::kernels::scalar
