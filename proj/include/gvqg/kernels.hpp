#pragma once
// Dense double-precision kernels used by the autograd engine.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The active table is chosen once at startup from CPUID
// and can be forced with GVQG_KERNELS=scalar|avx2.

#include <cstddef>
#include <string_view>

namespace gvqg::kernels {

struct KernelTable {
  const char* name;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C(m x n) += A(m x k) * B(k x n), all row-major with dense strides.
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // C(m x n) += A(m x k) * B(n x k)^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // C(k x n) += A(m x k)^T * B(m x n)
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the build or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

const KernelTable& active();
// Force a table by name ("scalar" or "avx2"); returns false if unavailable.
bool select(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  active().gemm_nn(a, b, c, m, k, n);
}
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  active().gemm_nt(a, b, c, m, k, n);
}
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  active().gemm_tn(a, b, c, m, k, n);
}

}  // namespace gvqg::kernels
