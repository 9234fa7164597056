#include <algorithm>
#include <cstring>

#include "kernels_internal.hpp"

namespace bitcache::kernels::detail {
namespace {

inline Word select_writeback(Writeback wb, Word sum, Word carry_out, Word data, Word tag) {
  switch (wb) {
    case Writeback::Sum: return sum;
    case Writeback::Carry: return carry_out;
    case Writeback::Data: return data;
    case Writeback::Tag: return tag;
  }
  return 0;
}

void compute_step(const StepIo& io) {
  for (std::size_t w = 0; w < io.words; ++w) {
    const Word a = io.a ? io.a[w] : 0;
    const Word b = (io.b ? io.b[w] : 0) ^ (io.invert_b ? ~Word{0} : 0);
    const Word c = io.carry ? io.carry[w] : 0;
    const Word and_ = a & b;
    const Word nor_ = ~a & ~b;
    const Word xor_ = ~(and_ | nor_);
    const Word sum = xor_ ^ c;
    const Word carry_out = and_ | (xor_ & c);
    if (io.dest) {
      const Word value = select_writeback(io.wb, sum, carry_out, io.data ? io.data[w] : 0,
                                          io.tag ? io.tag[w] : 0);
      const Word en = io.enable ? io.enable[w] : ~Word{0};
      io.dest[w] = (io.dest[w] & ~en) | (value & en);
    }
    if (io.update_carry && io.carry) io.carry[w] = carry_out;
  }
}

void masked_copy(const Word* src, Word* dst, const Word* enable, std::size_t words) {
  for (std::size_t w = 0; w < words; ++w) {
    const Word en = enable ? enable[w] : ~Word{0};
    dst[w] = (dst[w] & ~en) | (src[w] & en);
  }
}

void shift_lanes_down(const Word* src, Word* dst, std::size_t stride, std::size_t words) {
  const std::size_t q = stride / kLanesPerWord;
  const unsigned r = static_cast<unsigned>(stride % kLanesPerWord);
  for (std::size_t w = 0; w < words; ++w) {
    const Word lo = w + q < words ? src[w + q] : 0;
    const Word hi = w + q + 1 < words ? src[w + q + 1] : 0;
    dst[w] = r == 0 ? lo : (lo >> r) | (hi << (kLanesPerWord - r));
  }
}

// 8x8 bit-matrix transpose; byte i bit k <-> byte k bit i.
inline Word transpose8x8(Word x) {
  Word t = (x ^ (x >> 7)) & 0x00AA00AA00AA00AAULL;
  x = x ^ t ^ (t << 7);
  t = (x ^ (x >> 14)) & 0x0000CCCC0000CCCCULL;
  x = x ^ t ^ (t << 14);
  t = (x ^ (x >> 28)) & 0x00000000F0F0F0F0ULL;
  x = x ^ t ^ (t << 28);
  return x;
}

void transpose_bytes(const std::uint8_t* elems, std::size_t count, Word* out,
                     std::size_t row_stride) {
  const std::size_t words = (count + kLanesPerWord - 1) / kLanesPerWord;
  for (std::size_t w = 0; w < words; ++w) {
    Word rows[8] = {};
    for (std::size_t blk = 0; blk < 8; ++blk) {
      const std::size_t base = w * kLanesPerWord + blk * 8;
      if (base >= count) break;
      std::uint8_t bytes[8] = {};
      std::memcpy(bytes, elems + base, std::min<std::size_t>(8, count - base));
      Word x;
      std::memcpy(&x, bytes, 8);
      x = transpose8x8(x);
      for (std::size_t k = 0; k < 8; ++k) rows[k] |= ((x >> (8 * k)) & 0xFFU) << (8 * blk);
    }
    for (std::size_t k = 0; k < 8; ++k) out[k * row_stride + w] = rows[k];
  }
}

void untranspose_bytes(const Word* in, std::size_t row_stride, std::size_t count,
                       std::uint8_t* elems) {
  const std::size_t words = (count + kLanesPerWord - 1) / kLanesPerWord;
  for (std::size_t w = 0; w < words; ++w) {
    for (std::size_t blk = 0; blk < 8; ++blk) {
      const std::size_t base = w * kLanesPerWord + blk * 8;
      if (base >= count) break;
      Word x = 0;
      for (std::size_t k = 0; k < 8; ++k) x |= ((in[k * row_stride + w] >> (8 * blk)) & 0xFFU) << (8 * k);
      x = transpose8x8(x);
      std::uint8_t bytes[8];
      std::memcpy(bytes, &x, 8);
      std::memcpy(elems + base, bytes, std::min<std::size_t>(8, count - base));
    }
  }
}

}  // namespace

const KernelTable kWord64Table{Isa::Word64,      compute_step,    masked_copy,
                               shift_lanes_down, transpose_bytes, untranspose_bytes};

}  // namespace bitcache::kernels::detail
