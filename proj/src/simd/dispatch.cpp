#include <atomic>
#include <cstdlib>
#include <string_view>

#include "latentlm/simd/kernels.hpp"

namespace latentlm::simd {
namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("LATENTLM_SIMD");
      env != nullptr && std::string_view(env) == "scalar") {
    return &scalar_kernels();
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const KernelTable* t =
      isa == Isa::kScalar ? &scalar_kernels() : avx2_kernels();
  if (t == nullptr) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

}  // namespace latentlm::simd
