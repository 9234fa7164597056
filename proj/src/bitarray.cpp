#include "bitcache/bitarray.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "bitcache/error.hpp"

namespace bitcache {

namespace microcode {

std::uint64_t move_cycles(std::uint32_t rows, const CostCalibration& cal) {
  const double c = rows * cal.move_cycles_per_bit / cal.sense_amp_cycling_speedup;
  return static_cast<std::uint64_t>(std::ceil(c - 1e-9));
}

std::uint64_t max_cycles(std::uint32_t n, const CostCalibration& cal) {
  return subtract_cycles(n) + load_tag_cycles() + move_cycles(n, cal);
}

std::uint32_t reduce_result_width(std::uint32_t width, std::uint64_t group_size,
                                  std::uint32_t cap_bits) {
  const auto steps = static_cast<std::uint32_t>(std::countr_zero(group_size));
  return std::max(width, std::min(cap_bits, width + steps));
}

std::uint64_t reduce_cycles(std::uint32_t width, std::uint64_t group_size,
                            const CostCalibration& cal, std::uint32_t cap_bits) {
  std::uint64_t total = 0;
  std::uint32_t w = width;
  for (std::uint64_t g = group_size; g > 1; g /= 2) {
    total += move_cycles(w, cal);
    if (w < cap_bits) {
      total += add_cycles(w);
      ++w;
    } else {
      total += accumulate_cycles(w);
    }
  }
  return total;
}

}  // namespace microcode

CostCalibration CostCalibration::microcode_derived() {
  CostCalibration cal;
  // Product zeroing, 8-bit multiply, in-place add into the 24-bit partial sum.
  cal.cycles_per_mac_8bit = static_cast<double>(
      microcode::zero_cycles(16) + microcode::multiply_cycles(8) + microcode::accumulate_cycles(24));
  cal.cycles_reduction_conv = static_cast<double>(microcode::reduce_cycles(24, 32, cal));
  cal.mac_setup_cycles = static_cast<double>(microcode::zero_cycles(24));
  cal.microcode_costs = true;
  return cal;
}

bool regions_overlap(const OperandRegion& a, const OperandRegion& b) {
  if (a.width_bits == 0 || b.width_bits == 0) return false;
  return a.start_wordline < b.end_wordline() && b.start_wordline < a.end_wordline();
}

BitArray::BitArray(const GeometryConfig& cfg, const CostCalibration& cal)
    : BitArray(cfg.wordlines_per_array, cfg.bitlines_per_array, cal, cfg.energy_compute_pj) {}

BitArray::BitArray(std::uint32_t wordlines, std::uint32_t bitlines, const CostCalibration& cal,
                   double energy_compute_pj)
    : wordlines_(wordlines),
      bitlines_(bitlines),
      words_(bitlines / kernels::kLanesPerWord),
      cal_(cal),
      energy_compute_pj_(energy_compute_pj) {
  if (wordlines == 0 || bitlines == 0 || bitlines % kernels::kLanesPerWord != 0)
    throw Error(ErrorCode::InvalidConfig,
                "array needs wordlines > 0 and bitlines a positive multiple of 64");
  grid_.assign(std::size_t{wordlines} * words_, 0);
  carry_.assign(words_, 0);
  tag_.assign(words_, 0);
}

void BitArray::check_row(std::uint32_t r) const {
  if (r >= wordlines_)
    throw Error(ErrorCode::RowOutOfRange,
                "wordline " + std::to_string(r) + " of " + std::to_string(wordlines_));
}

LaneRange BitArray::clip(LaneRange lanes) const {
  lanes.end = std::min(lanes.end, bitlines_);
  if (lanes.begin >= lanes.end)
    throw Error(ErrorCode::RowOutOfRange, "empty or out-of-range lane range");
  return lanes;
}

void BitArray::check_region(const OperandRegion& r, const char* what) const {
  if (r.width_bits == 0)
    throw Error(ErrorCode::WidthMismatch, std::string(what) + " has zero width");
  if (std::uint64_t{r.start_wordline} + r.width_bits > wordlines_)
    throw Error(ErrorCode::RowOutOfRange, std::string(what) + " runs past the last wordline");
  clip(r.lanes);
}

std::vector<Word> BitArray::lane_mask(LaneRange lanes) const {
  lanes = clip(lanes);
  std::vector<Word> m(words_, 0);
  for (std::size_t w = 0; w < words_; ++w) {
    const std::uint64_t lo = w * kernels::kLanesPerWord;
    const std::uint64_t hi = lo + kernels::kLanesPerWord;
    const std::uint64_t b = std::max<std::uint64_t>(lo, lanes.begin);
    const std::uint64_t e = std::min<std::uint64_t>(hi, lanes.end);
    if (b >= e) continue;
    const std::uint64_t len = e - b;
    const Word bits = len == 64 ? ~Word{0} : ((Word{1} << len) - 1);
    m[w] = bits << (b - lo);
  }
  return m;
}

std::vector<Word> BitArray::enable_for(LaneRange lanes, bool predicated) const {
  auto m = lane_mask(lanes);
  if (predicated)
    for (std::size_t w = 0; w < words_; ++w) m[w] &= tag_[w];
  return m;
}

bool BitArray::bit(std::uint32_t row, std::uint32_t lane) const {
  check_row(row);
  if (lane >= bitlines_) throw Error(ErrorCode::RowOutOfRange, "lane out of range");
  return (row_ptr(row)[lane / 64] >> (lane % 64)) & 1U;
}

void BitArray::set_bit(std::uint32_t row, std::uint32_t lane, bool value) {
  check_row(row);
  if (lane >= bitlines_) throw Error(ErrorCode::RowOutOfRange, "lane out of range");
  const Word m = Word{1} << (lane % 64);
  Word& w = mut_row(row)[lane / 64];
  w = value ? (w | m) : (w & ~m);
}

std::span<const Word> BitArray::row(std::uint32_t r) const {
  check_row(r);
  return {row_ptr(r), words_};
}

void BitArray::write_row(std::uint32_t r, std::span<const Word> bits) {
  check_row(r);
  if (bits.size() != words_) throw Error(ErrorCode::WidthMismatch, "row word count");
  std::copy(bits.begin(), bits.end(), mut_row(r));
}

void BitArray::store(const OperandRegion& region, std::span<const std::uint64_t> values) {
  check_region(region, "store region");
  const LaneRange lanes = clip(region.lanes);
  if (values.size() != lanes.end - lanes.begin)
    throw Error(ErrorCode::WidthMismatch, "store needs one value per lane");
  if (region.width_bits < 64)
    for (auto v : values)
      if (v >> region.width_bits)
        throw Error(ErrorCode::WidthMismatch, "value does not fit the region width");
  for (std::uint32_t k = 0; k < region.width_bits; ++k)
    for (std::uint32_t j = lanes.begin; j < lanes.end; ++j)
      set_bit(region.row(k), j, (values[j - lanes.begin] >> k) & 1U);
}

std::vector<std::uint64_t> BitArray::load(const OperandRegion& region) const {
  check_region(region, "load region");
  if (region.width_bits > 64) throw Error(ErrorCode::WidthMismatch, "load width above 64 bits");
  const LaneRange lanes = clip(region.lanes);
  std::vector<std::uint64_t> out(lanes.end - lanes.begin, 0);
  for (std::uint32_t k = 0; k < region.width_bits; ++k) {
    const Word* r = row_ptr(region.row(k));
    for (std::uint32_t j = lanes.begin; j < lanes.end; ++j)
      out[j - lanes.begin] |= std::uint64_t{(r[j / 64] >> (j % 64)) & 1U} << k;
  }
  return out;
}

void BitArray::charge(std::uint64_t cycles) {
  cycles_ += cycles;
  energy_pj_ += static_cast<double>(cycles) * energy_compute_pj_;
}

void BitArray::step(const Word* a, const Word* b, bool invert_b, Writeback wb, Word* dest,
                    const Word* enable, bool update_carry) {
  kernels::StepIo io;
  io.a = a;
  io.b = b;
  io.invert_b = invert_b;
  io.carry = carry_.data();
  io.update_carry = update_carry;
  io.tag = tag_.data();
  io.enable = enable;
  io.dest = dest;
  io.wb = wb;
  io.words = words_;
  kernels::active().compute_step(io);
  ++micro_ops_;
}

void BitArray::set_carry(bool value) {
  std::fill(carry_.begin(), carry_.end(), value ? ~Word{0} : Word{0});
  ++micro_ops_;
}

void BitArray::compute_step(std::uint32_t row_a, std::uint32_t row_b, Writeback wb,
                            std::uint32_t dest, bool predicated) {
  check_row(row_a);
  check_row(row_b);
  check_row(dest);
  if (row_a == row_b) throw Error(ErrorCode::RegionOverlap, "compute_step senses one row twice");
  const auto en = enable_for(LaneRange::all(), predicated);
  step(row_ptr(row_a), row_ptr(row_b), false, wb, mut_row(dest), en.data(),
       wb == Writeback::Sum);
  charge(1);
}

namespace {

LaneRange same_lanes(const OperandRegion& a, const OperandRegion& b) {
  if (!(a.lanes == b.lanes)) throw Error(ErrorCode::WidthMismatch, "operand lane ranges differ");
  return a.lanes;
}

void require_disjoint(const OperandRegion& a, const OperandRegion& b, const char* what) {
  if (regions_overlap(a, b)) throw Error(ErrorCode::RegionOverlap, what);
}

}  // namespace

std::uint64_t BitArray::add(const OperandRegion& a, const OperandRegion& b,
                            const OperandRegion& dest) {
  check_region(a, "add operand a");
  check_region(b, "add operand b");
  check_region(dest, "add destination");
  const std::uint32_t n = a.width_bits;
  if (b.width_bits != n || dest.width_bits != n + 1)
    throw Error(ErrorCode::WidthMismatch, "add needs equal widths n and an n+1 bit destination");
  same_lanes(a, b);
  same_lanes(a, dest);
  require_disjoint(a, dest, "add destination overlaps operand a");
  require_disjoint(b, dest, "add destination overlaps operand b");

  const auto en = lane_mask(a.lanes);
  set_carry(false);
  for (std::uint32_t k = 0; k < n; ++k)
    step(row_ptr(a.row(k)), row_ptr(b.row(k)), false, Writeback::Sum, mut_row(dest.row(k)),
         en.data());
  // Sensing 0 and ~0 makes carry_out equal the latched carry.
  step(nullptr, nullptr, true, Writeback::Carry, mut_row(dest.row(n)), en.data(), false);

  const auto cycles = microcode::add_cycles(n);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::subtract(const OperandRegion& a, const OperandRegion& b,
                                 const OperandRegion& dest) {
  check_region(a, "subtract operand a");
  check_region(b, "subtract operand b");
  check_region(dest, "subtract destination");
  const std::uint32_t n = a.width_bits;
  if (b.width_bits != n || dest.width_bits != n + 1)
    throw Error(ErrorCode::WidthMismatch,
                "subtract needs equal widths n and an n+1 bit destination");
  same_lanes(a, b);
  same_lanes(a, dest);
  require_disjoint(a, dest, "subtract destination overlaps operand a");
  require_disjoint(b, dest, "subtract destination overlaps operand b");

  const auto en = lane_mask(a.lanes);
  set_carry(true);
  for (std::uint32_t k = 0; k < n; ++k)
    step(row_ptr(a.row(k)), row_ptr(b.row(k)), true, Writeback::Sum, mut_row(dest.row(k)),
         en.data());
  // Extension bit: 0 + ~0 + carry, i.e. the borrow.
  step(nullptr, nullptr, true, Writeback::Sum, mut_row(dest.row(n)), en.data());

  const auto cycles = microcode::subtract_cycles(n);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::multiply(const OperandRegion& a, const OperandRegion& b,
                                 const OperandRegion& product) {
  check_region(a, "multiplicand");
  check_region(b, "multiplier");
  check_region(product, "product");
  const std::uint32_t n = a.width_bits;
  if (b.width_bits != n || product.width_bits != 2 * n)
    throw Error(ErrorCode::WidthMismatch, "multiply needs widths n, n and 2n");
  same_lanes(a, b);
  same_lanes(a, product);
  require_disjoint(a, b, "multiplicand overlaps multiplier");
  require_disjoint(a, product, "product overlaps multiplicand");
  require_disjoint(b, product, "product overlaps multiplier");

  const auto mask = lane_mask(a.lanes);
  for (std::uint32_t k = 0; k < product.width_bits; ++k) {
    const Word* r = row_ptr(product.row(k));
    for (std::size_t w = 0; w < words_; ++w)
      if (r[w] & mask[w]) throw Error(ErrorCode::NotZeroed, "product region is not zeroed");
  }

  std::vector<Word> en(words_);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::copy_n(row_ptr(b.row(i)), words_, tag_.begin());
    ++micro_ops_;
    for (std::size_t w = 0; w < words_; ++w) en[w] = mask[w] & tag_[w];
    set_carry(false);
    for (std::uint32_t k = 0; k < n; ++k) {
      Word* p = mut_row(product.row(i + k));
      step(p, row_ptr(a.row(k)), false, Writeback::Sum, p, en.data());
    }
    step(nullptr, nullptr, true, Writeback::Carry, mut_row(product.row(i + n)), en.data(), false);
  }

  const auto cycles = microcode::multiply_cycles(n);
  charge(cycles);
  return cycles;
}

DivideResult BitArray::divide(const OperandRegion& a, const OperandRegion& b,
                              const OperandRegion& quotient, const OperandRegion& scratch) {
  check_region(a, "dividend");
  check_region(b, "divisor");
  check_region(quotient, "quotient");
  const std::uint32_t n = a.width_bits;
  if (b.width_bits != n || quotient.width_bits != n)
    throw Error(ErrorCode::WidthMismatch, "divide needs equal widths");
  if (scratch.width_bits < 3 * n + 2)
    throw Error(ErrorCode::InsufficientScratch,
                "divide needs " + std::to_string(3 * n + 2) + " scratch rows");
  check_region(scratch, "divide scratch");
  same_lanes(a, b);
  same_lanes(a, quotient);
  same_lanes(a, scratch);
  const OperandRegion* all[] = {&a, &b, &quotient, &scratch};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      require_disjoint(*all[i], *all[j], "divide regions overlap");

  DivideResult result;
  const auto mask = lane_mask(a.lanes);
  {
    const auto bv = load(b);
    const LaneRange lanes = clip(a.lanes);
    for (std::uint32_t j = 0; j < bv.size(); ++j)
      if (bv[j] == 0) result.zero_divisor_lanes.push_back(lanes.begin + j);
  }

  // Window W holds the running remainder with the dividend below it; T is the
  // trial difference and F the "no borrow" flag.
  const std::uint32_t w0 = scratch.start_wordline;
  const std::uint32_t t0 = w0 + 2 * n;
  const std::uint32_t f = t0 + n + 1;
  auto& k = kernels::active();
  for (std::uint32_t r = 0; r < n; ++r) {
    k.masked_copy(row_ptr(a.row(r)), mut_row(w0 + r), mask.data(), words_);
    ++micro_ops_;
  }
  for (std::uint32_t r = n; r < 2 * n; ++r) {
    step(nullptr, nullptr, false, Writeback::Data, mut_row(w0 + r), mask.data(), false);
  }

  std::vector<Word> en(words_);
  for (std::uint32_t i = n; i-- > 0;) {
    set_carry(true);
    for (std::uint32_t bit = 0; bit <= n; ++bit)
      step(row_ptr(w0 + i + bit), bit < n ? row_ptr(b.row(bit)) : nullptr, true, Writeback::Sum,
           mut_row(t0 + bit), mask.data());
    step(nullptr, nullptr, true, Writeback::Carry, mut_row(f), mask.data(), false);
    std::copy_n(row_ptr(f), words_, tag_.begin());
    ++micro_ops_;
    for (std::size_t w = 0; w < words_; ++w) en[w] = mask[w] & tag_[w];
    for (std::uint32_t bit = 0; bit <= n; ++bit) {
      k.masked_copy(row_ptr(t0 + bit), mut_row(w0 + i + bit), en.data(), words_);
      ++micro_ops_;
    }
    step(nullptr, nullptr, false, Writeback::Tag, mut_row(quotient.row(i)), mask.data(), false);
  }

  result.cycles = microcode::divide_cycles(n);
  charge(result.cycles);
  return result;
}

std::uint64_t BitArray::copy_rows(std::uint32_t src, std::uint32_t dest, std::uint32_t count,
                                  bool predicated, LaneRange lanes) {
  if (count == 0) return 0;
  check_region({src, count, lanes}, "copy source");
  check_region({dest, count, lanes}, "copy destination");
  if (regions_overlap({src, count, lanes}, {dest, count, lanes}))
    throw Error(ErrorCode::RegionOverlap, "copy ranges overlap");
  const auto en = enable_for(lanes, predicated);
  auto& k = kernels::active();
  for (std::uint32_t r = 0; r < count; ++r) {
    k.masked_copy(row_ptr(src + r), mut_row(dest + r), en.data(), words_);
    ++micro_ops_;
  }
  const auto cycles = microcode::move_cycles(count, cal_);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::import_rows(const BitArray& src, std::uint32_t src_row,
                                    std::uint32_t dest_row, std::uint32_t count) {
  if (src.bitlines_ != bitlines_)
    throw Error(ErrorCode::WidthMismatch, "partner array has a different lane count");
  if (count == 0) return 0;
  src.check_region({src_row, count}, "import source");
  check_region({dest_row, count}, "import destination");
  for (std::uint32_t r = 0; r < count; ++r) {
    std::copy_n(src.row_ptr(src_row + r), words_, mut_row(dest_row + r));
    ++micro_ops_;
  }
  const auto cycles = microcode::move_cycles(count, cal_);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::load_tag_from_row(std::uint32_t r) {
  check_row(r);
  std::copy_n(row_ptr(r), words_, tag_.begin());
  ++micro_ops_;
  charge(microcode::load_tag_cycles());
  return microcode::load_tag_cycles();
}

std::uint64_t BitArray::zero_rows(std::uint32_t start, std::uint32_t count, LaneRange lanes) {
  if (count == 0) return 0;
  check_region({start, count, lanes}, "zeroed rows");
  const auto en = lane_mask(lanes);
  for (std::uint32_t r = 0; r < count; ++r)
    step(nullptr, nullptr, false, Writeback::Data, mut_row(start + r), en.data(), false);
  const auto cycles = microcode::zero_cycles(count);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::elementwise_max(const OperandRegion& acc, const OperandRegion& next,
                                        const OperandRegion& scratch) {
  const std::uint32_t n = acc.width_bits;
  if (scratch.width_bits < n + 1)
    throw Error(ErrorCode::InsufficientScratch, "max needs n+1 scratch rows");
  require_disjoint(acc, next, "max operands overlap");
  const OperandRegion diff{scratch.start_wordline, n + 1, scratch.lanes};
  std::uint64_t cycles = subtract(acc, next, diff);
  cycles += load_tag_from_row(diff.row(n));
  cycles += copy_rows(next.start_wordline, acc.start_wordline, n, true, acc.lanes);
  return cycles;
}

std::uint64_t BitArray::elementwise_min(const OperandRegion& acc, const OperandRegion& next,
                                        const OperandRegion& scratch) {
  const std::uint32_t n = acc.width_bits;
  if (scratch.width_bits < n + 1)
    throw Error(ErrorCode::InsufficientScratch, "min needs n+1 scratch rows");
  require_disjoint(acc, next, "min operands overlap");
  const OperandRegion diff{scratch.start_wordline, n + 1, scratch.lanes};
  std::uint64_t cycles = subtract(next, acc, diff);
  cycles += load_tag_from_row(diff.row(n));
  cycles += copy_rows(next.start_wordline, acc.start_wordline, n, true, acc.lanes);
  return cycles;
}

void BitArray::add_in_place(std::uint32_t acc_start, std::uint32_t acc_width,
                            std::uint32_t addend_start, std::uint32_t addend_width,
                            bool write_carry, const Word* enable) {
  set_carry(false);
  for (std::uint32_t k = 0; k < acc_width; ++k) {
    Word* p = mut_row(acc_start + k);
    step(p, k < addend_width ? row_ptr(addend_start + k) : nullptr, false, Writeback::Sum, p,
         enable);
  }
  if (write_carry)
    step(nullptr, nullptr, true, Writeback::Carry, mut_row(acc_start + acc_width), enable, false);
}

std::uint64_t BitArray::accumulate(const OperandRegion& acc, const OperandRegion& addend) {
  check_region(acc, "accumulator");
  check_region(addend, "addend");
  if (addend.width_bits > acc.width_bits)
    throw Error(ErrorCode::WidthMismatch, "addend wider than accumulator");
  same_lanes(acc, addend);
  require_disjoint(acc, addend, "accumulator overlaps addend");
  const auto en = lane_mask(acc.lanes);
  add_in_place(acc.start_wordline, acc.width_bits, addend.start_wordline, addend.width_bits, false,
               en.data());
  const auto cycles = microcode::accumulate_cycles(acc.width_bits);
  charge(cycles);
  return cycles;
}

std::uint64_t BitArray::move_lanes(std::uint32_t src, std::uint32_t dest, std::uint32_t rows,
                                   std::uint32_t stride) {
  if (rows == 0) return 0;
  check_region({src, rows}, "lane move source");
  check_region({dest, rows}, "lane move destination");
  if (regions_overlap({src, rows}, {dest, rows}))
    throw Error(ErrorCode::RegionOverlap, "lane move ranges overlap");
  auto& k = kernels::active();
  for (std::uint32_t r = 0; r < rows; ++r) {
    k.shift_lanes_down(row_ptr(src + r), mut_row(dest + r), stride, words_);
    ++micro_ops_;
  }
  const auto cycles = microcode::move_cycles(rows, cal_);
  charge(cycles);
  return cycles;
}

ReduceResult BitArray::reduce_lanes(const OperandRegion& values, std::uint32_t group_size,
                                    std::uint32_t scratch_start) {
  check_region(values, "reduction values");
  if (group_size == 0 || !std::has_single_bit(group_size))
    throw Error(ErrorCode::NotPowerOfTwo, "reduction group size must be a power of two");
  const LaneRange lanes = clip(values.lanes);
  if ((lanes.end - lanes.begin) % group_size != 0)
    throw Error(ErrorCode::WidthMismatch, "lane range is not a whole number of groups");
  constexpr std::uint32_t cap = 32;
  if (values.width_bits > cap)
    throw Error(ErrorCode::WidthMismatch, "reduction values wider than 32 bits");

  const std::uint32_t final_width = microcode::reduce_result_width(values.width_bits, group_size);
  ReduceResult out{{values.start_wordline, final_width, values.lanes}, 0};
  if (group_size == 1) return out;
  if (std::uint64_t{values.start_wordline} + final_width > wordlines_ ||
      std::uint64_t{scratch_start} + final_width > wordlines_)
    throw Error(ErrorCode::InsufficientScratch, "no room to widen partial sums");
  if (regions_overlap(out.result, {scratch_start, final_width}))
    throw Error(ErrorCode::InsufficientScratch, "reduction scratch overlaps the widened values");

  const auto en = lane_mask(lanes);
  std::uint32_t w = values.width_bits;
  for (std::uint32_t stride = group_size / 2; stride >= 1; stride /= 2) {
    out.cycles += move_lanes(values.start_wordline, scratch_start, w, stride);
    const bool widen = w < cap;
    add_in_place(values.start_wordline, w, scratch_start, w, widen, en.data());
    const auto c = widen ? microcode::add_cycles(w) : microcode::accumulate_cycles(w);
    charge(c);
    out.cycles += c;
    if (widen) ++w;
  }
  return out;
}

std::uint64_t BitArray::relu(const OperandRegion& values) {
  check_region(values, "relu region");
  load_tag_from_row(values.row(values.width_bits - 1));
  const auto en = enable_for(values.lanes, true);
  for (std::uint32_t k = 0; k < values.width_bits; ++k)
    step(nullptr, nullptr, false, Writeback::Data, mut_row(values.row(k)), en.data(), false);
  charge(values.width_bits);
  return microcode::relu_cycles(values.width_bits);
}

std::string BitArray::dump() const {
  std::string out;
  out.reserve((std::size_t{wordlines_} + 2) * (bitlines_ + 8));
  auto emit = [&](const Word* r) {
    for (std::uint32_t j = 0; j < bitlines_; ++j) out.push_back(((r[j / 64] >> (j % 64)) & 1U) ? '1' : '0');
    out.push_back('\n');
  };
  for (std::uint32_t r = 0; r < wordlines_; ++r) emit(row_ptr(r));
  out += "carry ";
  emit(carry_.data());
  out += "tag ";
  emit(tag_.data());
  return out;
}

}  // namespace bitcache
