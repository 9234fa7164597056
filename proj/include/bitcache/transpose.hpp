#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bitcache/geometry.hpp"
#include "bitcache/kernels.hpp"

namespace bitcache {

/// Element-per-entry layout, as data sits in DRAM or the I/O way.
struct RegularBlock {
  std::uint32_t width_bits = 8;
  std::vector<std::uint64_t> elements;
};

/// Bit-per-row layout: row k holds bit k of every element, element j on lane j.
struct TransposedBlock {
  std::uint32_t width_bits = 8;
  std::size_t count = 0;
  std::size_t words_per_row = 0;
  std::vector<kernels::Word> rows;

  bool bit(std::uint32_t k, std::size_t j) const {
    return (rows[k * words_per_row + j / 64] >> (j % 64)) & 1U;
  }
};

/// Throws Error(WidthMismatch) if an element does not fit width_bits.
TransposedBlock to_transposed(const RegularBlock& block);
RegularBlock from_transposed(const TransposedBlock& block);

/// Byte tensors stored pre-transposed on disk: eight bit planes of
/// ceil(count / 8) bytes each, plane k holding bit k of element j at byte
/// j / 8, bit j % 8.
std::vector<std::uint8_t> pack_bit_planes(std::span<const std::uint8_t> elems);
std::vector<std::uint8_t> unpack_bit_planes(std::span<const std::uint8_t> planes,
                                            std::size_t count);

/// Access cycles for the transpose units of every slice to convert `bytes`
/// bytes, each unit handling one 64-bit column per access cycle.
std::uint64_t tmu_cycles(std::uint64_t bytes, const GeometryConfig& cfg);

}  // namespace bitcache
