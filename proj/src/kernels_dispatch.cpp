#include "cetal/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace cetal::kernels {

bool avx2_available() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const Backend& resolve() {
  const char* env = std::getenv("CETAL_SIMD");
  if (env && std::strcmp(env, "scalar") == 0) return scalar_backend();
  if (env && std::strcmp(env, "avx2") == 0) {
    if (const Backend* b = avx2_backend(); b && avx2_available()) return *b;
    return scalar_backend();
  }
  // auto
  if (const Backend* b = avx2_backend(); b && avx2_available()) return *b;
  return scalar_backend();
}

}  // namespace

const Backend& active() {
  static const Backend& chosen = resolve();
  return chosen;
}

std::string active_name() { return active().name; }

}  // namespace cetal::kernels
