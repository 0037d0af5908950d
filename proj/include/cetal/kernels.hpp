#pragma once

// Low-level numeric kernels used by the tensor engine's inner loops.
//
// Every kernel has a scalar reference implementation and, on x86-64 with
// AVX2+FMA, a vectorized variant. The active backend is chosen once at
// startup (cpuid), overridable with CETAL_SIMD=scalar|avx2|auto.
// Scalar and SIMD variants are equivalence-tested against each other.

#include <cstddef>
#include <string>

namespace cetal::kernels {

struct Backend {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = a[i] + b[i]
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // x[i] *= alpha
  void (*scale)(double* x, double alpha, std::size_t n);
  // out[i] += a[i] * b[i]
  void (*fma_acc)(const double* a, const double* b, double* out, std::size_t n);
};

const Backend& scalar_backend();
bool avx2_available();
const Backend* avx2_backend();  // nullptr when unavailable or not compiled in

// Active backend, resolved once from CPU features and CETAL_SIMD.
const Backend& active();
std::string active_name();

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline void add(const double* a, const double* b, double* out, std::size_t n) {
  active().add(a, b, out, n);
}
inline void mul(const double* a, const double* b, double* out, std::size_t n) {
  active().mul(a, b, out, n);
}
inline void scale(double* x, double alpha, std::size_t n) {
  active().scale(x, alpha, n);
}
inline void fma_acc(const double* a, const double* b, double* out, std::size_t n) {
  active().fma_acc(a, b, out, n);
}

}  // namespace cetal::kernels
