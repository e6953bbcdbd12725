#include "expres/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace expres::kernels::neon {
namespace {

void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* orow = out + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t lo = vdupq_n_f64(0.0), hi = vdupq_n_f64(0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(static_cast<double>(arow[p]));
        const float32x4_t bv = vld1q_f32(b + p * n + j);
        lo = vaddq_f64(lo, vmulq_f64(av, vcvt_f64_f32(vget_low_f32(bv))));
        hi = vaddq_f64(hi, vmulq_f64(av, vcvt_high_f64_f32(bv)));
      }
      vst1q_f32(orow + j, vcombine_f32(vcvt_f32_f64(lo), vcvt_f32_f64(hi)));
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(b[p * n + j]);
      orow[j] = static_cast<float>(acc);
    }
  }
}

void column_sum(const float* a, std::size_t m, std::size_t n, float* out) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    float64x2_t lo = vdupq_n_f64(0.0), hi = vdupq_n_f64(0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const float32x4_t v = vld1q_f32(a + i * n + j);
      lo = vaddq_f64(lo, vcvt_f64_f32(vget_low_f32(v)));
      hi = vaddq_f64(hi, vcvt_high_f64_f32(v));
    }
    vst1q_f32(out + j, vcombine_f32(vcvt_f32_f64(lo), vcvt_f32_f64(hi)));
  }
  for (; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(a[i * n + j]);
    out[j] = static_cast<float>(acc);
  }
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void accumulate(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_n_f32(vld1q_f32(a + i), s));
  for (; i < n; ++i) out[i] = a[i] * s;
}

}  // namespace

const KernelTable kTable{gemm, column_sum, add, accumulate, scale};

}  // namespace expres::kernels::neon
#endif
