#include <atomic>
#include <cstdlib>
#include <string>

#include "scm/kernels.hpp"

namespace scm::kernels {

#if defined(SCM_HAVE_AVX2)
const KernelTable& avx2_kernel_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SCM_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__)) && \
    (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_choice() {
  const KernelTable* best = &scalar_kernels();
  if (const KernelTable* v = avx2_kernels()) best = v;
  if (const char* env = std::getenv("SCM_KERNELS")) {
    for (const KernelTable* t : available())
      if (std::string(env) == t->name) return t;
  }
  return best;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> s{initial_choice()};
  return s;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(SCM_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2_kernel_table() : nullptr;
#else
  return nullptr;
#endif
}

std::vector<const KernelTable*> available() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const KernelTable* v = avx2_kernels()) out.push_back(v);
  return out;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  for (const KernelTable* t : available()) {
    if (name == t->name) {
      slot().store(t, std::memory_order_relaxed);
      return true;
    }
  }
  return false;
}

}  // namespace scm::kernels
