// AVX2 variants. This translation unit is compiled with -mavx2 and is only
// reached through the dispatch table after a runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cstring>

#include "kernels_internal.hpp"

namespace bitcache::kernels::detail {
namespace {

constexpr std::size_t kWordsPerVec = 4;

inline __m256i load_or_zero(const Word* p) {
  return p ? _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p)) : _mm256_setzero_si256();
}

inline void store(Word* p, __m256i v) { _mm256_storeu_si256(reinterpret_cast<__m256i*>(p), v); }

void compute_step(const StepIo& io) {
  const __m256i ones = _mm256_set1_epi64x(-1);
  const __m256i invert = io.invert_b ? ones : _mm256_setzero_si256();
  std::size_t w = 0;
  for (; w + kWordsPerVec <= io.words; w += kWordsPerVec) {
    const __m256i a = load_or_zero(io.a ? io.a + w : nullptr);
    const __m256i b = _mm256_xor_si256(load_or_zero(io.b ? io.b + w : nullptr), invert);
    const __m256i c = load_or_zero(io.carry ? io.carry + w : nullptr);
    const __m256i and_ = _mm256_and_si256(a, b);
    const __m256i nor_ = _mm256_andnot_si256(_mm256_or_si256(a, b), ones);
    const __m256i xor_ = _mm256_andnot_si256(_mm256_or_si256(and_, nor_), ones);
    const __m256i sum = _mm256_xor_si256(xor_, c);
    const __m256i carry_out = _mm256_or_si256(and_, _mm256_and_si256(xor_, c));
    if (io.dest) {
      __m256i value;
      switch (io.wb) {
        case Writeback::Sum: value = sum; break;
        case Writeback::Carry: value = carry_out; break;
        case Writeback::Data: value = load_or_zero(io.data ? io.data + w : nullptr); break;
        case Writeback::Tag: value = load_or_zero(io.tag ? io.tag + w : nullptr); break;
        default: value = _mm256_setzero_si256(); break;
      }
      const __m256i en = io.enable ? load_or_zero(io.enable + w) : ones;
      const __m256i old = load_or_zero(io.dest + w);
      store(io.dest + w, _mm256_or_si256(_mm256_andnot_si256(en, old), _mm256_and_si256(value, en)));
    }
    if (io.update_carry && io.carry) store(io.carry + w, carry_out);
  }
  if (w < io.words) {
    StepIo tail = io;
    auto adv = [w](auto* p) { return p ? p + w : p; };
    tail.a = adv(io.a);
    tail.b = adv(io.b);
    tail.carry = adv(io.carry);
    tail.data = adv(io.data);
    tail.tag = adv(io.tag);
    tail.enable = adv(io.enable);
    tail.dest = adv(io.dest);
    tail.words = io.words - w;
    kWord64Table.compute_step(tail);
  }
}

void masked_copy(const Word* src, Word* dst, const Word* enable, std::size_t words) {
  const __m256i ones = _mm256_set1_epi64x(-1);
  std::size_t w = 0;
  for (; w + kWordsPerVec <= words; w += kWordsPerVec) {
    const __m256i en = enable ? load_or_zero(enable + w) : ones;
    const __m256i s = load_or_zero(src + w);
    const __m256i d = load_or_zero(dst + w);
    store(dst + w, _mm256_or_si256(_mm256_andnot_si256(en, d), _mm256_and_si256(s, en)));
  }
  if (w < words) kWord64Table.masked_copy(src + w, dst + w, enable ? enable + w : nullptr, words - w);
}

void shift_lanes_down(const Word* src, Word* dst, std::size_t stride, std::size_t words) {
  const std::size_t q = stride / kLanesPerWord;
  const int r = static_cast<int>(stride % kLanesPerWord);
  const __m128i rs = _mm_cvtsi32_si128(r);
  const __m128i ls = _mm_cvtsi32_si128(static_cast<int>(kLanesPerWord) - r);
  std::size_t w = 0;
  // Vector body only while both source windows stay inside the row.
  for (; w + q + 1 + kWordsPerVec <= words; w += kWordsPerVec) {
    const __m256i lo = load_or_zero(src + w + q);
    __m256i v = _mm256_srl_epi64(lo, rs);
    if (r != 0) v = _mm256_or_si256(v, _mm256_sll_epi64(load_or_zero(src + w + q + 1), ls));
    store(dst + w, v);
  }
  for (; w < words; ++w) {
    const Word lo = w + q < words ? src[w + q] : 0;
    const Word hi = w + q + 1 < words ? src[w + q + 1] : 0;
    dst[w] = r == 0 ? lo : (lo >> r) | (hi << (kLanesPerWord - r));
  }
}

void transpose_bytes(const std::uint8_t* elems, std::size_t count, Word* out,
                     std::size_t row_stride) {
  const std::size_t words = (count + kLanesPerWord - 1) / kLanesPerWord;
  for (std::size_t w = 0; w < words; ++w) {
    Word rows[8] = {};
    for (std::size_t half = 0; half < 2; ++half) {
      const std::size_t base = w * kLanesPerWord + half * 32;
      if (base >= count) break;
      alignas(32) std::uint8_t buf[32] = {};
      std::memcpy(buf, elems + base, std::min<std::size_t>(32, count - base));
      const __m256i v = _mm256_load_si256(reinterpret_cast<const __m256i*>(buf));
      for (int k = 0; k < 8; ++k) {
        // Move bit k of every byte to that byte's MSB, then gather the MSBs.
        const __m256i shifted = _mm256_sll_epi16(v, _mm_cvtsi32_si128(7 - k));
        const auto mask = static_cast<std::uint32_t>(_mm256_movemask_epi8(shifted));
        rows[k] |= Word{mask} << (32 * half);
      }
    }
    for (std::size_t k = 0; k < 8; ++k) out[k * row_stride + w] = rows[k];
  }
}

void untranspose_bytes(const Word* in, std::size_t row_stride, std::size_t count,
                       std::uint8_t* elems) {
  const __m256i byte_index = _mm256_setr_epi8(0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1,  //
                                              2, 2, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3);
  const __m256i bit_select =
      _mm256_set1_epi64x(static_cast<long long>(0x8040201008040201ULL));
  const std::size_t words = (count + kLanesPerWord - 1) / kLanesPerWord;
  for (std::size_t w = 0; w < words; ++w) {
    for (std::size_t half = 0; half < 2; ++half) {
      const std::size_t base = w * kLanesPerWord + half * 32;
      if (base >= count) break;
      __m256i acc = _mm256_setzero_si256();
      for (int k = 0; k < 8; ++k) {
        const auto bits = static_cast<std::uint32_t>(in[k * row_stride + w] >> (32 * half));
        const __m256i spread = _mm256_shuffle_epi8(_mm256_set1_epi32(static_cast<int>(bits)), byte_index);
        const __m256i hit = _mm256_cmpeq_epi8(_mm256_and_si256(spread, bit_select), bit_select);
        acc = _mm256_or_si256(acc, _mm256_and_si256(hit, _mm256_set1_epi8(static_cast<char>(1 << k))));
      }
      alignas(32) std::uint8_t buf[32];
      _mm256_store_si256(reinterpret_cast<__m256i*>(buf), acc);
      std::memcpy(elems + base, buf, std::min<std::size_t>(32, count - base));
    }
  }
}

}  // namespace

const KernelTable kAvx2Table{Isa::Avx2,        compute_step,    masked_copy,
                             shift_lanes_down, transpose_bytes, untranspose_bytes};

}  // namespace bitcache::kernels::detail
