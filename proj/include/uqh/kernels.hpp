#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic with one portable reference implementation and
// optional SIMD variants. The variant is picked once per process from CPU
// features; UQH_FORCE_SCALAR=1 in the environment pins the scalar path.
namespace uqh::kernels {

struct KernelTable {
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x *= alpha
  void (*scal)(double alpha, double* x, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
};

const KernelTable& scalar();
// nullptr when the build has no AVX2 variant.
const KernelTable* avx2();
bool avx2_supported();

// The table selected for this process.
const KernelTable& active();

}  // namespace uqh::kernels
