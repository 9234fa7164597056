#pragma once

// Row-level kernels behind the bit-array model. A row of an SRAM array is a
// packed bitset, one bit per bit line, 64 lanes per word. Every kernel exists
// as a per-lane scalar reference, a portable 64-bit word variant and, where the
// host supports it, an AVX2 variant; all variants must agree bit for bit.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace bitcache::kernels {

using Word = std::uint64_t;
inline constexpr std::size_t kLanesPerWord = 64;

enum class Isa { Scalar, Word64, Avx2 };

std::string_view to_string(Isa isa) noexcept;

/// Source selected by the write-back mux in the column periphery.
enum class Writeback : std::uint8_t { Sum, Carry, Data, Tag };

/// Operands for one compute cycle over `words` words of lanes.
///
/// Lanes sense a = row a, b = row b (or its complement when invert_b), derive
/// and = a&b, nor = ~a&~b, xor = ~(and|nor), sum = xor^carry and
/// carry_out = and | (xor & carry). A null source row senses as all zeros.
/// The selected value is written to `dest` on lanes where `enable` is set
/// (null enable means every lane); the carry latch takes carry_out on every
/// lane when update_carry is set. All reads happen before any write, so dest
/// may alias a source row.
struct StepIo {
  const Word* a = nullptr;
  const Word* b = nullptr;
  bool invert_b = false;
  Word* carry = nullptr;
  bool update_carry = true;
  const Word* data = nullptr;
  const Word* tag = nullptr;
  const Word* enable = nullptr;
  Word* dest = nullptr;
  Writeback wb = Writeback::Sum;
  std::size_t words = 0;
};

struct KernelTable {
  Isa isa;
  void (*compute_step)(const StepIo& io);
  /// dst = src on enabled lanes (null enable = all lanes).
  void (*masked_copy)(const Word* src, Word* dst, const Word* enable, std::size_t words);
  /// dst[lane] = src[lane + stride], zero where lane + stride runs off the row.
  void (*shift_lanes_down)(const Word* src, Word* dst, std::size_t stride, std::size_t words);
  /// Bit-plane transpose of `count` bytes: bit k of element j lands in
  /// out[k * row_stride + j / 64] at bit j % 64. Eight rows are written.
  void (*transpose_bytes)(const std::uint8_t* elems, std::size_t count, Word* out,
                          std::size_t row_stride);
  /// Inverse of transpose_bytes.
  void (*untranspose_bytes)(const Word* in, std::size_t row_stride, std::size_t count,
                            std::uint8_t* elems);
};

bool available(Isa isa) noexcept;
Isa best_available() noexcept;

/// Table for a specific ISA; throws Error(InvalidConfig) when unavailable.
const KernelTable& table(Isa isa);

/// Kernels used by BitArray and the transpose module. Defaults to the best
/// ISA the host supports, or to BITCACHE_KERNELS=scalar|word64|avx2.
const KernelTable& active() noexcept;
void set_active(Isa isa);

}  // namespace bitcache::kernels
