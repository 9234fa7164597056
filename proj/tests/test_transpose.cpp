#include <doctest.h>

#include <bit>
#include <numeric>
#include <random>

#include "bitcache/error.hpp"
#include "bitcache/transpose.hpp"

using namespace bitcache;

TEST_CASE("two-element hand example") {
  const auto t = to_transposed({2, {0b01, 0b10}});
  CHECK(t.bit(0, 0));
  CHECK_FALSE(t.bit(0, 1));
  CHECK_FALSE(t.bit(1, 0));
  CHECK(t.bit(1, 1));
  CHECK(from_transposed(t).elements == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("all-zero and single-element blocks") {
  const auto t = to_transposed({8, std::vector<std::uint64_t>(256, 0)});
  for (auto w : t.rows) CHECK(w == 0);
  const auto one = to_transposed({13, {0x1ABC}});
  CHECK(from_transposed(one).elements == std::vector<std::uint64_t>{0x1ABC});
}

TEST_CASE("random blocks round-trip and conserve popcount") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10'000; ++trial) {
    const std::uint32_t width = trial % 3 == 0 ? 8 : 1 + static_cast<std::uint32_t>(rng() % 32);
    RegularBlock b{width, std::vector<std::uint64_t>(1 + rng() % 300)};
    for (auto& e : b.elements) e = rng() & ((std::uint64_t{1} << width) - 1);
    const auto t = to_transposed(b);
    const auto back = from_transposed(t);
    REQUIRE(back.elements == b.elements);
    std::uint64_t pop_a = 0, pop_b = 0;
    for (auto e : b.elements) pop_a += std::popcount(e);
    for (auto w : t.rows) pop_b += std::popcount(w);
    REQUIRE(pop_a == pop_b);
  }
}

TEST_CASE("oversized element is rejected") {
  CHECK_THROWS_AS(to_transposed({4, {16}}), Error);
}

TEST_CASE("bit-plane file layout") {
  const std::vector<std::uint8_t> v{0x01, 0x80, 0xFF};
  const auto p = pack_bit_planes(v);
  REQUIRE(p.size() == 8);
  CHECK(p[0] == 0b101);
  CHECK(p[7] == 0b110);
  CHECK(p[3] == 0b100);
  CHECK(unpack_bit_planes(p, 3) == v);
  std::vector<std::uint8_t> big(1000);
  std::iota(big.begin(), big.end(), 0);
  CHECK(unpack_bit_planes(pack_bit_planes(big), big.size()) == big);
  CHECK_THROWS_AS(unpack_bit_planes(p, 100), Error);
}

TEST_CASE("transpose unit throughput") {
  GeometryConfig cfg;
  // 28 units, one 8-byte column each per cycle.
  CHECK(tmu_cycles(8 * 28, cfg) == 1);
  CHECK(tmu_cycles(8 * 28 + 1, cfg) == 2);
  CHECK(tmu_cycles(0, cfg) == 0);
}
