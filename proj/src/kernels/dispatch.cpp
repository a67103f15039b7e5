#include <cstdlib>
#include <string>

#include "gvqg/kernels.hpp"

namespace gvqg::kernels {

const KernelTable* avx2_table_unchecked();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("GVQG_KERNELS");
  const KernelTable* avx = avx2_table();
  if (env != nullptr && std::string(env) == "scalar") return &scalar_table();
  return avx != nullptr ? avx : &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

const KernelTable* avx2_table() {
  static const bool ok = cpu_has_avx2();
  return ok ? avx2_table_unchecked() : nullptr;
}

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_table();
    return true;
  }
  if (name == "avx2" && avx2_table() != nullptr) {
    current() = avx2_table();
    return true;
  }
  return false;
}

}  // namespace gvqg::kernels
