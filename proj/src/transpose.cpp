#include "bitcache/transpose.hpp"

#include <cstring>

#include "bitcache/error.hpp"

namespace bitcache {

using kernels::Word;

TransposedBlock to_transposed(const RegularBlock& block) {
  if (block.width_bits == 0 || block.width_bits > 64)
    throw Error(ErrorCode::WidthMismatch, "block width must be 1..64 bits");
  TransposedBlock out;
  out.width_bits = block.width_bits;
  out.count = block.elements.size();
  out.words_per_row = (out.count + 63) / 64;
  out.rows.assign(std::size_t{out.width_bits} * out.words_per_row, 0);
  if (block.width_bits < 64)
    for (auto e : block.elements)
      if (e >> block.width_bits)
        throw Error(ErrorCode::WidthMismatch, "element does not fit the block width");

  if (block.width_bits == 8) {
    std::vector<std::uint8_t> bytes(block.elements.begin(), block.elements.end());
    kernels::active().transpose_bytes(bytes.data(), bytes.size(), out.rows.data(),
                                      out.words_per_row);
    return out;
  }
  for (std::size_t j = 0; j < out.count; ++j)
    for (std::uint32_t k = 0; k < out.width_bits; ++k)
      if ((block.elements[j] >> k) & 1U) out.rows[k * out.words_per_row + j / 64] |= Word{1} << (j % 64);
  return out;
}

RegularBlock from_transposed(const TransposedBlock& block) {
  if (block.rows.size() != std::size_t{block.width_bits} * block.words_per_row ||
      block.words_per_row * 64 < block.count)
    throw Error(ErrorCode::ShapeMismatch, "transposed block dimensions are inconsistent");
  RegularBlock out;
  out.width_bits = block.width_bits;
  if (block.width_bits == 8) {
    std::vector<std::uint8_t> bytes(block.count);
    kernels::active().untranspose_bytes(block.rows.data(), block.words_per_row, block.count,
                                        bytes.data());
    out.elements.assign(bytes.begin(), bytes.end());
    return out;
  }
  out.elements.assign(block.count, 0);
  for (std::size_t j = 0; j < block.count; ++j)
    for (std::uint32_t k = 0; k < block.width_bits; ++k)
      out.elements[j] |= std::uint64_t{block.bit(k, j)} << k;
  return out;
}

std::vector<std::uint8_t> pack_bit_planes(std::span<const std::uint8_t> elems) {
  const std::size_t words = (elems.size() + 63) / 64;
  const std::size_t plane_bytes = (elems.size() + 7) / 8;
  std::vector<Word> rows(8 * words, 0);
  kernels::active().transpose_bytes(elems.data(), elems.size(), rows.data(), words);
  std::vector<std::uint8_t> out(8 * plane_bytes);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t b = 0; b < plane_bytes; ++b)
      out[k * plane_bytes + b] = static_cast<std::uint8_t>(rows[k * words + b / 8] >> (8 * (b % 8)));
  return out;
}

std::vector<std::uint8_t> unpack_bit_planes(std::span<const std::uint8_t> planes,
                                            std::size_t count) {
  const std::size_t words = (count + 63) / 64;
  const std::size_t plane_bytes = (count + 7) / 8;
  if (planes.size() != 8 * plane_bytes)
    throw Error(ErrorCode::ShapeMismatch, "bit-plane data has the wrong size");
  std::vector<Word> rows(8 * words, 0);
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t b = 0; b < plane_bytes; ++b)
      rows[k * words + b / 8] |= Word{planes[k * plane_bytes + b]} << (8 * (b % 8));
  std::vector<std::uint8_t> out(count);
  kernels::active().untranspose_bytes(rows.data(), words, count, out.data());
  return out;
}

std::uint64_t tmu_cycles(std::uint64_t bytes, const GeometryConfig& cfg) {
  const std::uint64_t columns = (bytes * 8 + 63) / 64;
  const std::uint64_t units = std::uint64_t{cfg.tmus_per_slice} * cfg.num_slices;
  return (columns + units - 1) / units;
}

}  // namespace bitcache
