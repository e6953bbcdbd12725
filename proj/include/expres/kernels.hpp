#pragma once

// Data-parallel inner loops behind the differentiable primitives.
//
// Every kernel has a scalar reference implementation and optional AVX2 / NEON
// variants selected once at startup. Vector variants only parallelise across
// independent outputs; each output keeps the reference accumulation order
// (f64 accumulator, ascending reduction index), so all backends produce
// bit-identical results. Products of two f32 values are exact in f64, which
// makes fused and unfused multiply-add agree as well.
//
// EXPRES_SIMD=scalar|avx2|neon|auto overrides detection.

#include <cstddef>
#include <vector>

namespace expres::kernels {

enum class Backend { Scalar, Avx2, Neon };

const char* name(Backend backend);

struct KernelTable {
  // out[m,n] = a[m,k] * b[k,n]
  void (*gemm)(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n);
  // out[j] = sum_i a[i,j]
  void (*column_sum)(const float* a, std::size_t m, std::size_t n, float* out);
  // out[i] = a[i] + b[i]
  void (*add)(const float* a, const float* b, float* out, std::size_t n);
  // y[i] += x[i]
  void (*accumulate)(const float* x, float* y, std::size_t n);
  // out[i] = a[i] * s
  void (*scale)(const float* a, float s, float* out, std::size_t n);
};

// Backends compiled in and supported by the running CPU; Scalar is always first.
std::vector<Backend> available();
bool is_available(Backend backend);
Backend active();
// Throws ContractError if the backend is not available.
void set_active(Backend backend);
const KernelTable& table(Backend backend);

// Restores the previously active backend on destruction.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend backend) : previous_(active()) { set_active(backend); }
  ~ScopedBackend() { set_active(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

inline void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n) {
  table(active()).gemm(a, b, out, m, k, n);
}
inline void column_sum(const float* a, std::size_t m, std::size_t n, float* out) {
  table(active()).column_sum(a, m, n, out);
}
inline void add(const float* a, const float* b, float* out, std::size_t n) { table(active()).add(a, b, out, n); }
inline void accumulate(const float* x, float* y, std::size_t n) { table(active()).accumulate(x, y, n); }
inline void scale(const float* a, float s, float* out, std::size_t n) { table(active()).scale(a, s, out, n); }

namespace scalar {
extern const KernelTable kTable;
}
#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
extern const KernelTable kTable;
}
#endif
#if defined(__aarch64__)
namespace neon {
extern const KernelTable kTable;
}
#endif

}  // namespace expres::kernels
