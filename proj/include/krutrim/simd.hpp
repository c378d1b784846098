#pragma once
// Dense arithmetic kernels used by the transformer, with a scalar reference
// implementation and an AVX2+FMA variant chosen at runtime.
//
// Selection order: KRUTRIM_SIMD environment variable ("scalar" or "avx2"),
// then the best ISA the CPU reports. set_isa() overrides both and is intended
// for tests and benchmarks.

#include <cstddef>
#include <span>
#include <string_view>

namespace krutrim::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
void set_isa(Isa isa);

// Row-major kernels. Matrices are [rows x cols] with stride == cols.
template <class T>
struct KernelTable {
  T (*dot)(const T* a, const T* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // out[r, o] = sum_k in[r, k] * w[o, k]        in: [rows x inner], w: [cols x inner]
  void (*matmul_nt)(const T* in, const T* w, T* out, std::size_t rows, std::size_t inner,
                    std::size_t cols);
  // din[r, k] += sum_o dout[r, o] * w[o, k]     dout: [rows x cols], w: [cols x inner]
  void (*matmul_nn_acc)(const T* dout, const T* w, T* din, std::size_t rows, std::size_t inner,
                        std::size_t cols);
  // dw[o, k] += sum_r dout[r, o] * in[r, k]     dout: [rows x cols], in: [rows x inner]
  void (*matmul_tn_acc)(const T* dout, const T* in, T* dw, std::size_t rows, std::size_t inner,
                        std::size_t cols);
};

template <class T>
const KernelTable<T>& kernels(Isa isa);

template <class T>
const KernelTable<T>& kernels() {
  return kernels<T>(active_isa());
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  return kernels<T>().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

template <class T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  kernels<T>().axpy(alpha, x.data(), y.data(), x.size() < y.size() ? x.size() : y.size());
}

}  // namespace krutrim::simd
