#include <atomic>
#include <cstdlib>
#include <string>

#include "expres/errors.hpp"
#include "expres/kernels.hpp"

namespace expres::kernels {
namespace {

bool cpu_supports(Backend backend) {
  switch (backend) {
    case Backend::Scalar: return true;
    case Backend::Avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend detect() {
  const char* env = std::getenv("EXPRES_SIMD");
  const std::string want = env ? env : "auto";
  if (want == "scalar") return Backend::Scalar;
  if (want == "avx2" && cpu_supports(Backend::Avx2)) return Backend::Avx2;
  if (want == "neon" && cpu_supports(Backend::Neon)) return Backend::Neon;
  if (cpu_supports(Backend::Avx2)) return Backend::Avx2;
  if (cpu_supports(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

std::atomic<Backend>& active_slot() {
  static std::atomic<Backend> slot{detect()};
  return slot;
}

}  // namespace

const char* name(Backend backend) {
  switch (backend) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    case Backend::Neon: return "neon";
  }
  return "unknown";
}

std::vector<Backend> available() {
  std::vector<Backend> out{Backend::Scalar};
  for (Backend b : {Backend::Avx2, Backend::Neon}) {
    if (cpu_supports(b)) out.push_back(b);
  }
  return out;
}

bool is_available(Backend backend) { return cpu_supports(backend); }

Backend active() { return active_slot().load(std::memory_order_relaxed); }

void set_active(Backend backend) {
  if (!cpu_supports(backend)) {
    throw ContractError(std::string("kernel backend '") + name(backend) + "' is not available on this CPU");
  }
  active_slot().store(backend, std::memory_order_relaxed);
}

const KernelTable& table(Backend backend) {
  switch (backend) {
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::Avx2: return avx2::kTable;
#endif
#if defined(__aarch64__)
    case Backend::Neon: return neon::kTable;
#endif
    default: return scalar::kTable;
  }
}

}  // namespace expres::kernels
