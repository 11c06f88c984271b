#include "bcrl/kernels.hpp"

#include <stdexcept>
#include <string>

namespace bcrl::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(BCRL_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend pick_default() {
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend g_active = pick_default();

}  // namespace

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return cpu_has_avx2();
  }
  return false;
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "unknown";
}

void set_backend(Backend b) {
  if (!backend_available(b)) {
    throw std::invalid_argument("kernel backend not available on this host: " +
                                std::string(backend_name(b)));
  }
  g_active = b;
}

Backend active_backend() { return g_active; }

const Ops& ops() {
#if defined(BCRL_HAVE_AVX2_TU)
  if (g_active == Backend::avx2) return avx2_ops;
#endif
  return scalar_ops;
}

}  // namespace bcrl::kernels
