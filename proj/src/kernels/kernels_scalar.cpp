// Per-lane reference kernels. Each lane is evaluated on its own with plain
// booleans, following the sense-amp / gate description literally. These are
// the ground truth the word and AVX2 variants are tested against.

#include "kernels_internal.hpp"

namespace bitcache::kernels::detail {
namespace {

bool get(const Word* row, std::size_t lane) {
  return row != nullptr && ((row[lane / kLanesPerWord] >> (lane % kLanesPerWord)) & 1U);
}

void put(Word* row, std::size_t lane, bool v) {
  const Word m = Word{1} << (lane % kLanesPerWord);
  if (v)
    row[lane / kLanesPerWord] |= m;
  else
    row[lane / kLanesPerWord] &= ~m;
}

void compute_step(const StepIo& io) {
  const std::size_t lanes = io.words * kLanesPerWord;
  for (std::size_t j = 0; j < lanes; ++j) {
    const bool a = get(io.a, j);
    const bool b = io.invert_b ? !get(io.b, j) : get(io.b, j);
    const bool c = get(io.carry, j);
    const bool and_ = a && b;           // bit line
    const bool nor_ = !a && !b;         // bit line complement
    const bool xor_ = !(and_ || nor_);  // NOR of the two sense outputs
    const bool sum = xor_ != c;
    const bool carry_out = and_ || (xor_ && c);

    if (io.dest != nullptr && (io.enable == nullptr || get(io.enable, j))) {
      bool value = false;
      switch (io.wb) {
        case Writeback::Sum: value = sum; break;
        case Writeback::Carry: value = carry_out; break;
        case Writeback::Data: value = get(io.data, j); break;
        case Writeback::Tag: value = get(io.tag, j); break;
      }
      put(io.dest, j, value);
    }
    if (io.update_carry && io.carry != nullptr) put(io.carry, j, carry_out);
  }
}

void masked_copy(const Word* src, Word* dst, const Word* enable, std::size_t words) {
  const std::size_t lanes = words * kLanesPerWord;
  for (std::size_t j = 0; j < lanes; ++j) {
    if (enable == nullptr || get(enable, j)) put(dst, j, get(src, j));
  }
}

void shift_lanes_down(const Word* src, Word* dst, std::size_t stride, std::size_t words) {
  const std::size_t lanes = words * kLanesPerWord;
  for (std::size_t j = 0; j < lanes; ++j) {
    put(dst, j, j + stride < lanes && get(src, j + stride));
  }
}

void transpose_bytes(const std::uint8_t* elems, std::size_t count, Word* out,
                     std::size_t row_stride) {
  const std::size_t words = (count + kLanesPerWord - 1) / kLanesPerWord;
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t w = 0; w < words; ++w) out[k * row_stride + w] = 0;
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t k = 0; k < 8; ++k) put(out + k * row_stride, j, (elems[j] >> k) & 1U);
}

void untranspose_bytes(const Word* in, std::size_t row_stride, std::size_t count,
                       std::uint8_t* elems) {
  for (std::size_t j = 0; j < count; ++j) {
    unsigned v = 0;
    for (std::size_t k = 0; k < 8; ++k) v |= unsigned{get(in + k * row_stride, j)} << k;
    elems[j] = static_cast<std::uint8_t>(v);
  }
}

}  // namespace

const KernelTable kScalarTable{Isa::Scalar,    compute_step,      masked_copy,
                               shift_lanes_down, transpose_bytes, untranspose_bytes};

}  // namespace bitcache::kernels::detail
