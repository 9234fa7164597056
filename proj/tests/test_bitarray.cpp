#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "bitcache/bitarray.hpp"
#include "bitcache/error.hpp"

using namespace bitcache;
using U64s = std::vector<std::uint64_t>;

namespace {

constexpr std::uint32_t kLanes = 256;

struct IsaGuard {
  explicit IsaGuard(kernels::Isa isa) { kernels::set_active(isa); }
  ~IsaGuard() { kernels::set_active(kernels::best_available()); }
};

std::vector<kernels::Isa> isas() {
  std::vector<kernels::Isa> v{kernels::Isa::Scalar, kernels::Isa::Word64};
  if (kernels::available(kernels::Isa::Avx2)) v.push_back(kernels::Isa::Avx2);
  return v;
}

LaneRange first(std::uint32_t count) { return {0, count}; }

// Runs one binary op over lane-parallel operands and returns (result, cycles).
enum class Op { Add, Sub, Mul, Div, Max, Min };

std::pair<U64s, std::uint64_t> run_op(Op op, std::uint32_t n, const U64s& a, const U64s& b) {
  const auto lanes = first(static_cast<std::uint32_t>(a.size()));
  BitArray arr(256, kLanes);
  const OperandRegion ra{0, n, lanes}, rb{n, n, lanes};
  const std::uint32_t out = 2 * n;
  arr.store(ra, a);
  arr.store(rb, b);
  const auto before = arr.cycle_count();
  std::uint64_t reported = 0;
  U64s result;
  switch (op) {
    case Op::Add: {
      const OperandRegion d{out, n + 1, lanes};
      reported = arr.add(ra, rb, d);
      result = arr.load(d);
      break;
    }
    case Op::Sub: {
      const OperandRegion d{out, n + 1, lanes};
      reported = arr.subtract(ra, rb, d);
      result = arr.load(d);
      break;
    }
    case Op::Mul: {
      const OperandRegion d{out, 2 * n, lanes};
      reported = arr.multiply(ra, rb, d);
      result = arr.load(d);
      break;
    }
    case Op::Div: {
      const OperandRegion q{out, n, lanes}, s{out + n, 3 * n + 2, lanes};
      reported = arr.divide(ra, rb, q, s).cycles;
      result = arr.load(q);
      break;
    }
    case Op::Max:
    case Op::Min: {
      const OperandRegion s{out, n + 1, lanes};
      reported = op == Op::Max ? arr.elementwise_max(ra, rb, s) : arr.elementwise_min(ra, rb, s);
      result = arr.load(ra);
      break;
    }
  }
  CHECK(arr.cycle_count() - before == reported);
  return {result, reported};
}

std::uint64_t oracle(Op op, std::uint32_t n, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t mask = (std::uint64_t{1} << n) - 1;
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return (a - b) & ((mask << 1) | 1);
    case Op::Mul: return a * b;
    case Op::Div: return b == 0 ? mask : a / b;
    case Op::Max: return std::max(a, b);
    case Op::Min: return std::min(a, b);
  }
  return 0;
}

void check_batch(Op op, std::uint32_t n, const U64s& a, const U64s& b) {
  const auto [got, cycles] = run_op(op, n, a, b);
  (void)cycles;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const auto want = oracle(op, n, a[j], b[j]);
    if (got[j] != want) {
      FAIL_CHECK("op " << static_cast<int>(op) << " n=" << n << " a=" << a[j] << " b=" << b[j]
                       << " got " << got[j] << " want " << want);
      return;
    }
  }
}

}  // namespace

TEST_CASE("compute_step matches the full-adder truth table") {
  // Lane v encodes a = bit0, b = bit1, carry = bit2; the first step
  // (c + c with a zero latch) leaves carry = c on every lane.
  BitArray probe(4, 64);
  for (std::uint32_t v = 0; v < 8; ++v) {
    probe.set_bit(0, v, v & 4);
    probe.set_bit(1, v, v & 4);
  }
  probe.compute_step(0, 1, Writeback::Sum, 3, false);
  for (std::uint32_t v = 0; v < 8; ++v) {
    probe.set_bit(0, v, v & 1);
    probe.set_bit(1, v, v & 2);
  }
  probe.compute_step(0, 1, Writeback::Sum, 2, false);
  for (std::uint32_t v = 0; v < 8; ++v) {
    const bool a = v & 1, b = v & 2, c = v & 4;
    CHECK(probe.bit(2, v) == (a ^ b ^ c));
    const bool cout = (a && b) || ((a ^ b) && c);
    CHECK(((probe.carry()[0] >> v) & 1U) == static_cast<unsigned>(cout));
  }
  CHECK(probe.cycle_count() == 2);
}

TEST_CASE("predicated step leaves tag-zero lanes unchanged") {
  BitArray arr(4, 64);
  arr.write_row(0, std::vector<Word>{~Word{0}});
  arr.write_row(3, std::vector<Word>{0xF0F0});
  arr.write_row(2, std::vector<Word>{0x00FF});
  arr.load_tag_from_row(2);
  arr.compute_step(0, 1, Writeback::Sum, 3, true);
  // Sum of ones and zeros is one on tagged lanes only.
  CHECK(arr.row(3)[0] == ((0xF0F0 & ~Word{0xFF}) | 0xFF));
  CHECK_THROWS_AS(arr.compute_step(0, 0, Writeback::Sum, 3, false), Error);
  CHECK_THROWS_AS(arr.compute_step(0, 4, Writeback::Sum, 3, false), Error);
}

TEST_CASE("add, multiply, divide, subtract and max examples") {
  SUBCASE("add n=4") {
    auto [r, c] = run_op(Op::Add, 4, {3, 5, 0, 15}, {2, 7, 0, 1});
    CHECK(r == U64s{5, 12, 0, 16});
    CHECK(c == 5);
  }
  SUBCASE("add identity n=8") {
    const U64s b{1, 77, 255, 128, 9};
    auto [r, c] = run_op(Op::Add, 8, U64s(5, 0), b);
    CHECK(r == b);
    CHECK(c == 9);
  }
  SUBCASE("multiply n=2") {
    auto [r, c] = run_op(Op::Mul, 2, {3, 2, 1, 0}, {3, 1, 2, 0});
    CHECK(r == U64s{9, 2, 2, 0});
    CHECK(c == 12);
  }
  SUBCASE("multiply n=8 cycles") { CHECK(run_op(Op::Mul, 8, {255, 0}, {255, 3}).second == 102); }
  SUBCASE("divide n=4") {
    auto [r, c] = run_op(Op::Div, 4, {12, 7, 9}, {4, 2, 3});
    CHECK(r == U64s{3, 3, 3});
    CHECK(c == 46);
  }
  SUBCASE("divide a=b") {
    auto [r, c] = run_op(Op::Div, 8, {1, 77, 255}, {1, 77, 255});
    CHECK(r == U64s{1, 1, 1});
    CHECK(c == 140);
  }
  SUBCASE("subtract n=8") {
    auto [r, c] = run_op(Op::Sub, 8, {5, 200, 42}, {9, 100, 42});
    CHECK((r[0] >> 8) == 1);
    CHECK(r[1] == 100);
    CHECK(r[2] == 0);
    CHECK(c == 10);
  }
  SUBCASE("max keeps the larger, ties keep acc") {
    auto [r, c] = run_op(Op::Max, 4, {5, 9, 6}, {9, 5, 6});
    CHECK(r == U64s{9, 9, 6});
    CHECK(c == microcode::max_cycles(4, {}));
  }
}

TEST_CASE("divide reports zero divisors and yields all ones") {
  BitArray arr(256, 64);
  const LaneRange lanes{0, 3};
  arr.store({0, 4, lanes}, U64s{9, 3, 15});
  arr.store({4, 4, lanes}, U64s{0, 1, 0});
  const auto res = arr.divide({0, 4, lanes}, {4, 4, lanes}, {8, 4, lanes}, {12, 14, lanes});
  CHECK(res.zero_divisor_lanes == std::vector<std::uint32_t>{0, 2});
  CHECK(arr.load({8, 4, lanes}) == U64s{15, 3, 15});
  CHECK_THROWS_AS(arr.divide({0, 4, lanes}, {4, 4, lanes}, {8, 4, lanes}, {12, 13, lanes}), Error);
}

TEST_CASE("exhaustive small widths match integer semantics on every kernel ISA") {
  for (auto isa : isas()) {
    IsaGuard guard(isa);
    CAPTURE(kernels::to_string(isa));
    for (std::uint32_t n : {2u, 3u, 4u}) {
      U64s a, b;
      for (std::uint64_t x = 0; x < (1u << n); ++x)
        for (std::uint64_t y = 0; y < (1u << n); ++y) {
          a.push_back(x);
          b.push_back(y);
        }
      for (Op op : {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Max, Op::Min}) check_batch(op, n, a, b);
    }
  }
}

TEST_CASE("random 8-bit lane pairs match integer semantics") {
  std::mt19937_64 rng(2024);
  constexpr int kPairs = 100'000;
  for (Op op : {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Max, Op::Min}) {
    for (int done = 0; done < kPairs; done += kLanes) {
      U64s a(kLanes), b(kLanes);
      for (auto& v : a) v = rng() & 0xFF;
      for (auto& v : b) v = rng() & 0xFF;
      check_batch(op, 8, a, b);
    }
  }
}

TEST_CASE("cycle counts equal the closed forms") {
  for (std::uint32_t n : {2u, 4u, 8u, 16u}) {
    CAPTURE(n);
    const U64s a{1, 2, 3}, b{3, 2, 1};
    CHECK(run_op(Op::Add, n, a, b).second == n + 1);
    CHECK(run_op(Op::Mul, n, a, b).second == std::uint64_t{n} * n + 5 * n - 2);
    CHECK(run_op(Op::Div, n, a, b).second * 2 == 3ULL * n * n + 11ULL * n);
    CHECK(run_op(Op::Sub, n, a, b).second == n + 2);
  }
  CHECK(microcode::divide_cycles(8) == 140);
  CHECK(microcode::multiply_cycles(8) == 102);
}

TEST_CASE("lane permutation commutes with arithmetic") {
  std::mt19937_64 rng(5);
  U64s a(kLanes), b(kLanes);
  for (auto& v : a) v = rng() & 0xFF;
  for (auto& v : b) v = rng() & 0xFF;
  std::vector<std::size_t> perm(kLanes);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  U64s pa(kLanes), pb(kLanes);
  for (std::size_t j = 0; j < kLanes; ++j) {
    pa[j] = a[perm[j]];
    pb[j] = b[perm[j]];
  }
  for (Op op : {Op::Mul, Op::Div, Op::Max}) {
    const auto r = run_op(op, 8, a, b).first;
    const auto pr = run_op(op, 8, pa, pb).first;
    for (std::size_t j = 0; j < kLanes; ++j) CHECK(pr[j] == r[perm[j]]);
  }
}

TEST_CASE("region checks") {
  BitArray arr(256, 64);
  const LaneRange l{0, 4};
  CHECK_THROWS_AS(arr.add({0, 4, l}, {4, 4, l}, {2, 5, l}), Error);
  CHECK_THROWS_AS(arr.add({0, 4, l}, {4, 4, l}, {8, 4, l}), Error);
  CHECK_THROWS_AS(arr.add({0, 4, l}, {4, 4, l}, {254, 5, l}), Error);
  arr.store({16, 1, l}, U64s{0, 1, 0, 0});
  try {
    arr.multiply({0, 4, l}, {4, 4, l}, {10, 8, l});
    FAIL("expected NotZeroed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotZeroed);
  }
  CHECK_THROWS_AS(arr.copy_rows(0, 4, 8, false), Error);
}

TEST_CASE("copy, predication and tag") {
  BitArray arr(64, 64);
  arr.store({0, 8, {0, 4}}, U64s{1, 2, 3, 200});
  CHECK(arr.copy_rows(0, 8, 8, false) == 8);
  CHECK(arr.load({8, 8, {0, 4}}) == U64s{1, 2, 3, 200});
  arr.zero_rows(40, 1);
  arr.load_tag_from_row(40);
  const auto before = arr.load({8, 8, {0, 4}});
  arr.copy_rows(16, 8, 8, true);
  CHECK(arr.load({8, 8, {0, 4}}) == before);
  arr.write_row(41, std::vector<Word>{0xA5});
  arr.load_tag_from_row(41);
  CHECK(arr.tag()[0] == 0xA5);
}

TEST_CASE("accumulate and relu") {
  BitArray arr(64, 64);
  const LaneRange l{0, 3};
  arr.store({0, 24, l}, U64s{10, (1u << 24) - 1, 0});
  arr.store({24, 16, l}, U64s{5, 1, 65535});
  CHECK(arr.accumulate({0, 24, l}, {24, 16, l}) == 24);
  CHECK(arr.load({0, 24, l}) == U64s{15, 0, 65535});
  arr.store({40, 8, l}, U64s{0x80, 0x7F, 0xFF});
  CHECK(arr.relu({40, 8, l}) == 9);
  CHECK(arr.load({40, 8, l}) == U64s{0, 0x7F, 0});
}

TEST_CASE("lane reduction") {
  SUBCASE("four words in two steps") {
    BitArray arr(64, 64);
    arr.store({0, 8, {0, 4}}, U64s{11, 22, 33, 44});
    const auto r = arr.reduce_lanes({0, 8, {0, 4}}, 4, 20);
    CHECK(r.result.width_bits == 10);
    CHECK(arr.load({0, 10, {0, 1}})[0] == 110);
    CHECK(r.cycles == microcode::reduce_cycles(8, 4, {}));
    CHECK(r.cycles == (8 + 9) + (9 + 10));
  }
  SUBCASE("group of one is free") {
    BitArray arr(64, 64);
    const auto r = arr.reduce_lanes({0, 8}, 1, 20);
    CHECK(r.cycles == 0);
    CHECK(arr.cycle_count() == 0);
  }
  SUBCASE("32 lanes of 16-bit values, several groups") {
    std::mt19937_64 rng(9);
    BitArray arr(256, kLanes);
    U64s v(kLanes);
    for (auto& x : v) x = rng() & 0xFFFF;
    arr.store({0, 16}, v);
    const auto r = arr.reduce_lanes({0, 16}, 32, 100);
    CHECK(r.result.width_bits == 21);
    const auto out = arr.load(r.result);
    for (std::uint32_t g = 0; g < kLanes / 32; ++g) {
      std::uint64_t sum = 0;
      for (std::uint32_t j = 0; j < 32; ++j) sum += v[g * 32 + j];
      CHECK(out[g * 32] == sum);
    }
  }
  SUBCASE("widening stops at 32 bits") {
    BitArray arr(256, kLanes);
    arr.store({0, 31}, U64s(kLanes, 0x7FFFFFFFULL));
    const auto r = arr.reduce_lanes({0, 31}, 8, 100);
    CHECK(r.result.width_bits == 32);
    CHECK(arr.load(r.result)[0] == ((0x7FFFFFFFULL * 8) & 0xFFFFFFFFULL));
  }
  SUBCASE("errors") {
    BitArray arr(64, 64);
    CHECK_THROWS_AS(arr.reduce_lanes({0, 8}, 3, 20), Error);
    CHECK_THROWS_AS(arr.reduce_lanes({0, 8}, 4, 4), Error);
    CHECK_THROWS_AS(arr.reduce_lanes({0, 8}, 4, 60), Error);
  }
}

TEST_CASE("microcode-derived calibration") {
  const auto cal = CostCalibration::microcode_derived();
  CHECK(cal.microcode_costs);
  CHECK(cal.cycles_per_mac_8bit == doctest::Approx(128));
  CHECK(cal.mac_setup_cycles == doctest::Approx(3));
  CHECK(cal.cycles_reduction_conv == doctest::Approx(265));
}

TEST_CASE("dump format") {
  BitArray arr(3, 64);
  arr.store({0, 2, {0, 3}}, U64s{1, 2, 3});
  arr.load_tag_from_row(1);
  const std::string zeros61(61, '0');
  const std::string want = "101" + zeros61 + "\n" + "011" + zeros61 + "\n" +
                           std::string(64, '0') + "\n" + "carry " + std::string(64, '0') + "\n" +
                           "tag 011" + zeros61 + "\n";
  CHECK(arr.dump() == want);
}
