#include <cstdlib>
#include <cstring>

#include "uqh/kernels.hpp"

namespace uqh::kernels {

#ifdef UQH_HAVE_AVX2
namespace detail {
const KernelTable* avx2_table();
}

const KernelTable* avx2() { return detail::avx2_table(); }

bool avx2_supported() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#else
const KernelTable* avx2() { return nullptr; }
bool avx2_supported() { return false; }
#endif

namespace {

const KernelTable& select() {
  const char* force = std::getenv("UQH_FORCE_SCALAR");
  if (force != nullptr && std::strcmp(force, "0") != 0 && force[0] != '\0') return scalar();
  if (avx2() != nullptr && avx2_supported()) return *avx2();
  return scalar();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace uqh::kernels
