#include <cmath>
#include <vector>

#include "doctest.h"
#include "krutrim/rng.hpp"
#include "krutrim/simd.hpp"

using namespace krutrim;

namespace {

template <class T>
std::vector<T> randv(Pcg32& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <class T>
void check_equivalent(double tol) {
  if (!simd::isa_supported(simd::Isa::kAvx2)) return;
  const auto& s = simd::kernels<T>(simd::Isa::kScalar);
  const auto& a = simd::kernels<T>(simd::Isa::kAvx2);
  Pcg32 rng(5, 5);
  for (std::size_t n : {0, 1, 3, 7, 8, 9, 15, 16, 17, 31, 33, 100, 257}) {
    const auto x = randv<T>(rng, n);
    const auto y = randv<T>(rng, n);
    CHECK(std::abs(static_cast<double>(s.dot(x.data(), y.data(), n) - a.dot(x.data(), y.data(), n))) <=
          tol * static_cast<double>(1 + n));
    auto y1 = y, y2 = y;
    s.axpy(T(0.5), x.data(), y1.data(), n);
    a.axpy(T(0.5), x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(static_cast<double>(y1[i] - y2[i])) <= tol);
  }
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 16, 8}, {5, 33, 9}, {2, 64, 17}};
  for (const auto& sh : shapes) {
    const std::size_t rows = sh[0], inner = sh[1], cols = sh[2];
    const auto in = randv<T>(rng, rows * inner);
    const auto w = randv<T>(rng, cols * inner);
    const auto dout = randv<T>(rng, rows * cols);
    std::vector<T> o1(rows * cols), o2(rows * cols);
    s.matmul_nt(in.data(), w.data(), o1.data(), rows, inner, cols);
    a.matmul_nt(in.data(), w.data(), o2.data(), rows, inner, cols);
    for (std::size_t i = 0; i < o1.size(); ++i) CHECK(std::abs(static_cast<double>(o1[i] - o2[i])) <= tol * static_cast<double>(inner));
    std::vector<T> d1(rows * inner, T(1)), d2(rows * inner, T(1));
    s.matmul_nn_acc(dout.data(), w.data(), d1.data(), rows, inner, cols);
    a.matmul_nn_acc(dout.data(), w.data(), d2.data(), rows, inner, cols);
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(std::abs(static_cast<double>(d1[i] - d2[i])) <= tol * static_cast<double>(cols));
    std::vector<T> g1(cols * inner), g2(cols * inner);
    s.matmul_tn_acc(dout.data(), in.data(), g1.data(), rows, inner, cols);
    a.matmul_tn_acc(dout.data(), in.data(), g2.data(), rows, inner, cols);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(static_cast<double>(g1[i] - g2[i])) <= tol * static_cast<double>(rows));
  }
}

}  // namespace

TEST_CASE("scalar and avx2 kernels agree in float") { check_equivalent<float>(1e-5); }

TEST_CASE("scalar and avx2 kernels agree in double") { check_equivalent<double>(1e-12); }

TEST_CASE("scalar dot matches a plain loop") {
  const std::vector<double> a{1, 2, 3}, b{4, -5, 6};
  CHECK(simd::kernels<double>(simd::Isa::kScalar).dot(a.data(), b.data(), 3) == doctest::Approx(12.0));
}

TEST_CASE("isa override") {
  const auto before = simd::active_isa();
  simd::set_isa(simd::Isa::kScalar);
  CHECK(simd::active_isa() == simd::Isa::kScalar);
  CHECK(simd::isa_name(simd::Isa::kScalar) == "scalar");
  simd::set_isa(before);
}
