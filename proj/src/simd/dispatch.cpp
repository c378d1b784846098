#include "krutrim/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"

namespace krutrim::simd {
namespace {

namespace d = detail;

template <class T>
constexpr KernelTable<T> kScalarTable{&d::scalar::dot, &d::scalar::axpy, &d::scalar::matmul_nt,
                                      &d::scalar::matmul_nn_acc, &d::scalar::matmul_tn_acc};

template <class T>
constexpr KernelTable<T> kAvx2Table{&d::avx2::dot, &d::avx2::axpy, &d::avx2::matmul_nt,
                                    &d::avx2::matmul_nn_acc, &d::avx2::matmul_tn_acc};

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("KRUTRIM_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return Isa::kScalar;
    if (want == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::kScalar) return true;
  static const bool avx2 = d::avx2_compiled() && cpu_has_avx2();
  return avx2;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  current().store(isa_supported(isa) ? isa : Isa::kScalar, std::memory_order_relaxed);
}

template <class T>
const KernelTable<T>& kernels(Isa isa) {
  return isa == Isa::kAvx2 && isa_supported(Isa::kAvx2) ? kAvx2Table<T> : kScalarTable<T>;
}

template const KernelTable<float>& kernels<float>(Isa);
template const KernelTable<double>& kernels<double>(Isa);

}  // namespace krutrim::simd
