#include <atomic>
#include <cstdlib>
#include <string>

#include "bitcache/error.hpp"
#include "kernels_internal.hpp"

namespace bitcache::kernels {

std::string_view to_string(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Word64: return "word64";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

bool available(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar:
    case Isa::Word64: return true;
    case Isa::Avx2:
#if BITCACHE_HAVE_AVX2
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa best_available() noexcept { return available(Isa::Avx2) ? Isa::Avx2 : Isa::Word64; }

const KernelTable& table(Isa isa) {
  if (!available(isa))
    throw Error(ErrorCode::InvalidConfig, std::string("kernel ISA not available: ") +
                                              std::string(to_string(isa)));
  switch (isa) {
    case Isa::Scalar: return detail::kScalarTable;
    case Isa::Word64: return detail::kWord64Table;
    case Isa::Avx2:
#if BITCACHE_HAVE_AVX2
      return detail::kAvx2Table;
#else
      break;
#endif
  }
  return detail::kWord64Table;
}

namespace {

Isa initial_isa() noexcept {
  if (const char* env = std::getenv("BITCACHE_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "word64") return Isa::Word64;
    if (v == "avx2" && available(Isa::Avx2)) return Isa::Avx2;
  }
  return best_available();
}

std::atomic<const KernelTable*>& active_slot() noexcept {
  static std::atomic<const KernelTable*> slot{&table(initial_isa())};
  return slot;
}

}  // namespace

const KernelTable& active() noexcept { return *active_slot().load(std::memory_order_acquire); }

void set_active(Isa isa) { active_slot().store(&table(isa), std::memory_order_release); }

}  // namespace bitcache::kernels
