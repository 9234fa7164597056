#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bitcache/geometry.hpp"
#include "bitcache/kernels.hpp"

namespace bitcache {

using kernels::Word;
using kernels::Writeback;

/// Closed-form cycle counts for the bit-serial microcode. These are the timing
/// model; BitArray charges exactly these amounts and the analytic engine uses
/// the same functions.
namespace microcode {

constexpr std::uint64_t add_cycles(std::uint32_t n) { return n + 1; }
constexpr std::uint64_t subtract_cycles(std::uint32_t n) { return n + 2; }
constexpr std::uint64_t multiply_cycles(std::uint32_t n) {
  return std::uint64_t{n} * n + 5ULL * n - 2;
}
/// 1.5n^2 + 5.5n, which is integral for every n.
constexpr std::uint64_t divide_cycles(std::uint32_t n) { return std::uint64_t{n} * (3ULL * n + 11) / 2; }
constexpr std::uint64_t load_tag_cycles() { return 1; }
/// Bulk zeroing writes eight rows per cycle.
constexpr std::uint64_t zero_cycles(std::uint32_t rows) { return (rows + 7ULL) / 8; }
/// In-place accumulate into an acc_width-bit accumulator, final carry dropped.
constexpr std::uint64_t accumulate_cycles(std::uint32_t acc_width) { return acc_width; }
/// Predicated zeroing of every row of a region gated on its MSB.
constexpr std::uint64_t relu_cycles(std::uint32_t width) { return 1 + std::uint64_t{width}; }

std::uint64_t move_cycles(std::uint32_t rows, const CostCalibration& cal);
std::uint64_t max_cycles(std::uint32_t n, const CostCalibration& cal);
/// Lane-tree reduction of `group_size` lanes starting from `width`-bit values,
/// widening one bit per step up to `cap_bits`.
std::uint64_t reduce_cycles(std::uint32_t width, std::uint64_t group_size,
                            const CostCalibration& cal, std::uint32_t cap_bits = 32);
std::uint32_t reduce_result_width(std::uint32_t width, std::uint64_t group_size,
                                  std::uint32_t cap_bits = 32);

}  // namespace microcode

/// Half-open range of bit lines.
struct LaneRange {
  std::uint32_t begin = 0;
  std::uint32_t end = UINT32_MAX;

  static constexpr LaneRange all() { return {}; }
  bool operator==(const LaneRange&) const = default;
};

/// Operand stored in transposed layout: bit k of the element on lane j lives
/// at wordline start_wordline + k, least significant bit first.
struct OperandRegion {
  std::uint32_t start_wordline = 0;
  std::uint32_t width_bits = 0;
  LaneRange lanes = LaneRange::all();

  std::uint32_t end_wordline() const { return start_wordline + width_bits; }
  std::uint32_t row(std::uint32_t bit) const { return start_wordline + bit; }
};

struct DivideResult {
  std::uint64_t cycles = 0;
  /// Active lanes whose divisor was zero; their quotient is all ones.
  std::vector<std::uint32_t> zero_divisor_lanes;
};

struct ReduceResult {
  OperandRegion result;
  std::uint64_t cycles = 0;
};

/// One compute-capable SRAM array: a wordlines x bitlines bit grid plus the
/// carry and tag latch rows of the column periphery.
///
/// Every charged operation advances cycle_count by its closed-form timing and
/// adds energy_compute_pj per cycle. micro_ops counts the individual
/// row-level steps the functional microcode actually issued.
class BitArray {
 public:
  explicit BitArray(const GeometryConfig& cfg = {}, const CostCalibration& cal = {});
  BitArray(std::uint32_t wordlines, std::uint32_t bitlines, const CostCalibration& cal = {},
           double energy_compute_pj = 15.4);

  std::uint32_t wordlines() const { return wordlines_; }
  std::uint32_t bitlines() const { return bitlines_; }
  std::size_t words_per_row() const { return words_; }

  // Host-side access. Not charged; data movement is accounted by the engine.
  bool bit(std::uint32_t row, std::uint32_t lane) const;
  void set_bit(std::uint32_t row, std::uint32_t lane, bool value);
  std::span<const Word> row(std::uint32_t r) const;
  void write_row(std::uint32_t r, std::span<const Word> bits);
  /// Writes one value per lane of `region` (values.size() == lane count).
  void store(const OperandRegion& region, std::span<const std::uint64_t> values);
  std::vector<std::uint64_t> load(const OperandRegion& region) const;
  std::span<const Word> carry() const { return carry_; }
  std::span<const Word> tag() const { return tag_; }

  /// One bit-line compute cycle: senses rows a and b, writes the mux-selected
  /// value to dest (only where tag is set when predicated) and updates the
  /// carry latch on Sum write-back. Reads precede the write within the cycle,
  /// so dest may be one of the source rows.
  void compute_step(std::uint32_t row_a, std::uint32_t row_b, Writeback wb, std::uint32_t dest,
                    bool predicated);

  /// dest = a + b. dest must be n + 1 bits wide and disjoint from a and b.
  std::uint64_t add(const OperandRegion& a, const OperandRegion& b, const OperandRegion& dest);
  /// dest = a + ~b + 1 over n + 1 bits; bit n of dest is set iff a < b.
  std::uint64_t subtract(const OperandRegion& a, const OperandRegion& b, const OperandRegion& dest);
  /// product = a * b (unsigned); product is 2n bits and must already be zero.
  std::uint64_t multiply(const OperandRegion& a, const OperandRegion& b,
                         const OperandRegion& product);
  /// quotient = floor(a / b) by restoring division. `scratch` needs 3n + 2 rows.
  DivideResult divide(const OperandRegion& a, const OperandRegion& b,
                      const OperandRegion& quotient, const OperandRegion& scratch);

  std::uint64_t copy_rows(std::uint32_t src, std::uint32_t dest, std::uint32_t count,
                          bool predicated, LaneRange lanes = LaneRange::all());
  /// Copies rows from a sense-amp-sharing partner array, charged as a move.
  std::uint64_t import_rows(const BitArray& src, std::uint32_t src_row, std::uint32_t dest_row,
                            std::uint32_t count);
  std::uint64_t load_tag_from_row(std::uint32_t row);
  std::uint64_t zero_rows(std::uint32_t start, std::uint32_t count,
                          LaneRange lanes = LaneRange::all());

  /// acc = max(acc, next); ties keep acc. scratch is n + 1 bits.
  std::uint64_t elementwise_max(const OperandRegion& acc, const OperandRegion& next,
                                const OperandRegion& scratch);
  std::uint64_t elementwise_min(const OperandRegion& acc, const OperandRegion& next,
                                const OperandRegion& scratch);

  /// acc += addend in place (addend zero-extended), result mod 2^acc.width.
  std::uint64_t accumulate(const OperandRegion& acc, const OperandRegion& addend);

  /// Copies `rows` rows from src to dest shifted so that lane j receives lane
  /// j + stride. Charged as a word-line move.
  std::uint64_t move_lanes(std::uint32_t src, std::uint32_t dest, std::uint32_t rows,
                           std::uint32_t stride);

  /// Sums each contiguous group of `group_size` lanes into the group's first
  /// lane. The result grows in place above `values`; `scratch_start` holds the
  /// lane-shifted partner operand.
  ReduceResult reduce_lanes(const OperandRegion& values, std::uint32_t group_size,
                            std::uint32_t scratch_start);

  /// Zeroes lanes whose MSB is set.
  std::uint64_t relu(const OperandRegion& values);

  std::uint64_t cycle_count() const { return cycles_; }
  double energy_pj() const { return energy_pj_; }
  std::uint64_t micro_ops() const { return micro_ops_; }
  const CostCalibration& calibration() const { return cal_; }

  /// One line of '0'/'1' per wordline (lane 0 first), then carry and tag rows.
  std::string dump() const;

 private:
  Word* mut_row(std::uint32_t r) { return grid_.data() + std::size_t{r} * words_; }
  const Word* row_ptr(std::uint32_t r) const { return grid_.data() + std::size_t{r} * words_; }
  void check_row(std::uint32_t r) const;
  LaneRange clip(LaneRange lanes) const;
  void check_region(const OperandRegion& r, const char* what) const;
  std::vector<Word> lane_mask(LaneRange lanes) const;
  /// Enable row for a write: lane range, intersected with tag when predicated.
  std::vector<Word> enable_for(LaneRange lanes, bool predicated) const;

  void step(const Word* a, const Word* b, bool invert_b, Writeback wb, Word* dest,
            const Word* enable, bool update_carry = true);
  void set_carry(bool value);
  void add_in_place(std::uint32_t acc_start, std::uint32_t acc_width, std::uint32_t addend_start,
                    std::uint32_t addend_width, bool write_carry, const Word* enable);
  void charge(std::uint64_t cycles);

  std::uint32_t wordlines_;
  std::uint32_t bitlines_;
  std::size_t words_;
  CostCalibration cal_;
  double energy_compute_pj_;
  std::vector<Word> grid_;
  std::vector<Word> carry_;
  std::vector<Word> tag_;
  std::uint64_t cycles_ = 0;
  std::uint64_t micro_ops_ = 0;
  double energy_pj_ = 0.0;
};

bool regions_overlap(const OperandRegion& a, const OperandRegion& b);

}  // namespace bitcache
