#include <doctest.h>

#include <algorithm>
#include <random>

#include "bitcache/engine.hpp"
#include "bitcache/error.hpp"

using namespace bitcache;

namespace {

// One slice with two compute ways of two narrow arrays: forces many serial steps.
GeometryConfig small_cache() {
  GeometryConfig g;
  g.num_slices = 1;
  g.ways_per_slice = 4;
  g.banks_per_way = 1;
  g.arrays_per_bank = 2;
  g.bitlines_per_array = 64;
  return g;
}

void check_matches_oracle(const GeometryConfig& cfg, std::uint32_t threads) {
  const auto toy = toy_network(5);
  const auto in = random_input(toy.in_h, toy.in_w, toy.in_c, 11);
  const auto ref = reference_inference(toy, in);
  Engine e(cfg, CostCalibration::microcode_derived(), {Fidelity::Functional, 1, threads});
  const auto r = e.run(toy, {in});
  for (const auto& s : toy.layers) {
    const auto d = compare_outputs(ref.at(s.layer.name), r.activations[0].at(s.layer.name));
    CHECK_MESSAGE(d.match, s.layer.name, " first mismatch at ", d.y, ",", d.x, ",", d.c);
  }
}

}  // namespace

TEST_CASE("quantization parameters") {
  const auto q = derive_quant_params(37, 77);
  CHECK(q.multiplier < 65536);
  CHECK(quantize_value(37, q) == 0);
  CHECK(quantize_value(77, q) == 255);
  const auto flat = derive_quant_params(9, 9);
  CHECK(quantize_value(9, flat) == 0);
  CHECK_THROWS_AS(derive_quant_params(5, 4), Error);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    std::uint32_t lo = static_cast<std::uint32_t>(rng()), hi = static_cast<std::uint32_t>(rng());
    if (lo > hi) std::swap(lo, hi);
    if (lo == hi) continue;
    const auto p = derive_quant_params(lo, hi);
    CHECK(quantize_value(hi, p) >= 254);
    const std::uint32_t v = lo + static_cast<std::uint32_t>(rng() % (std::uint64_t{hi} - lo + 1));
    const double ideal = 255.0 * (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
    CHECK(std::abs(quantize_value(v, p) - ideal) <= 1.5);
  }
}

TEST_CASE("in-array post-processing matches host arithmetic") {
  std::mt19937_64 rng(17);
  BitArray a(256, 64);
  const std::uint32_t n = a.bitlines();

  SUBCASE("batch norm and relu") {
    std::vector<std::uint32_t> values(n);
    std::vector<std::uint16_t> scale(n);
    std::vector<std::uint32_t> bias(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      values[i] = static_cast<std::uint32_t>(rng() >> 40);
      scale[i] = static_cast<std::uint16_t>(rng());
      bias[i] = static_cast<std::uint32_t>(static_cast<std::int32_t>(rng() % (1u << 28)) - (1 << 27));
    }
    auto got = values;
    exec::batchnorm_relu(a, 0, got, scale, bias, 7, true);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t y = ((values[i] >> 7) & 0xFFFFu) * scale[i] + bias[i];
      CHECK(got[i] == (static_cast<std::int32_t>(y) < 0 ? 0u : y));
    }
  }
  SUBCASE("min and max over valid slots") {
    std::vector<std::vector<std::uint32_t>> slots(5, std::vector<std::uint32_t>(n));
    std::vector<std::vector<bool>> valid(5, std::vector<bool>(n));
    std::uint32_t lo = 0xFFFFFFFFu, hi = 0;
    for (std::size_t s = 0; s < slots.size(); ++s)
      for (std::uint32_t l = 0; l < n; ++l) {
        slots[s][l] = static_cast<std::uint32_t>(rng());
        valid[s][l] = rng() % 3 != 0;
        if (valid[s][l]) {
          lo = std::min(lo, slots[s][l]);
          hi = std::max(hi, slots[s][l]);
        }
      }
    const auto mm = exec::minmax(a, 0, slots, valid);
    CHECK(mm.min == lo);
    CHECK(mm.max == hi);
    CHECK(mm.cycles > 0);
  }
  SUBCASE("requantization") {
    const auto q = derive_quant_params(1000, 1u << 22);
    std::vector<std::uint32_t> values(n);
    for (auto& v : values) v = 1000 + static_cast<std::uint32_t>(rng() % ((1u << 22) - 999));
    std::vector<std::uint8_t> out;
    exec::requantize(a, 0, values, q, out);
    for (std::uint32_t i = 0; i < n; ++i) CHECK(out[i] == quantize_value(values[i], q));
  }
  SUBCASE("pools") {
    std::vector<std::vector<std::uint8_t>> taps(9, std::vector<std::uint8_t>(n));
    for (auto& t : taps)
      for (auto& v : t) v = static_cast<std::uint8_t>(rng());
    std::vector<std::uint8_t> mx, avg;
    const auto max_cycles = exec::maxpool(a, 0, taps, mx);
    exec::avgpool(a, 0, taps, avg);
    for (std::uint32_t l = 0; l < n; ++l) {
      std::uint32_t m = 0, sum = 0;
      for (const auto& t : taps) {
        m = std::max<std::uint32_t>(m, t[l]);
        sum += t[l];
      }
      CHECK(mx[l] == m);
      CHECK(avg[l] == sum / 9);
    }
    CHECK(max_cycles == 8 * 19);
    CHECK(avgpool_sum_width(9) == 12);
    CHECK(avgpool_sum_width(64) == 14);
  }
}

TEST_CASE("functional toy network matches the integer oracle") {
  SUBCASE("default cache") { check_matches_oracle(GeometryConfig{}, 4); }
  SUBCASE("small cache with many serial steps") { check_matches_oracle(small_cache(), 2); }
}

TEST_CASE("functional cycles equal the analytic schedule under microcode costs") {
  const auto cal = CostCalibration::microcode_derived();
  for (const auto& cfg : {GeometryConfig{}, small_cache()}) {
    const auto toy = toy_network(2);
    const auto in = random_input(toy.in_h, toy.in_w, toy.in_c, 4);
    const auto f = Engine(cfg, cal, {Fidelity::Functional, 2, 3}).run(toy, {in}).report;
    const auto a = Engine(cfg, cal, {Fidelity::Analytic, 2}).run(toy).report;
    REQUIRE(f.per_layer.size() == a.per_layer.size());
    for (std::size_t i = 0; i < f.per_layer.size(); ++i)
      for (Phase p : kAllPhases)
        CHECK_MESSAGE(f.per_layer[i].cycles(p) == a.per_layer[i].cycles(p), f.per_layer[i].name, " ",
                      to_string(p));
    CHECK(f.total_latency_s == doctest::Approx(a.total_latency_s));
  }
}

TEST_CASE("functional runs are deterministic across thread counts") {
  const auto toy = toy_network(8);
  const std::vector<Tensor> ins = {random_input(toy.in_h, toy.in_w, toy.in_c, 1),
                                   random_input(toy.in_h, toy.in_w, toy.in_c, 2)};
  const auto one = Engine({}, {}, {Fidelity::Functional, 2, 1}).run(toy, ins);
  const auto many = Engine({}, {}, {Fidelity::Functional, 2, 8}).run(toy, ins);
  CHECK(one.activations == many.activations);
  CHECK(nlohmann::json(one.report) == nlohmann::json(many.report));
  CHECK(one.activations[0] != one.activations[1]);
}

TEST_CASE("filter residency") {
  FilterResidency r;
  const auto conv = make_conv("c", 8, 16, 3, 3, 16);
  const CostCalibration cal;
  CHECK(r.load(conv, cal) == doctest::Approx(2304 / cal.dram_filter_bytes_per_cycle));
  CHECK(r.load(conv, cal) == 0.0);
  r.evict();
  CHECK(r.load(conv, cal) > 0.0);
}

TEST_CASE("batch outputs beyond the I/O way spill to DRAM") {
  const auto layer = make_conv("big", 147, 64, 3, 3, 64);
  const GeometryConfig cfg;
  const CostCalibration cal;
  const std::uint64_t out = layer.output_bytes();
  const auto fits = static_cast<std::uint32_t>(cfg.io_capacity_bytes() / out);
  CHECK(spill_cycles(layer, fits, cfg, cal) == 0.0);
  const double over = static_cast<double>(std::uint64_t{fits + 1} * out - cfg.io_capacity_bytes());
  CHECK(spill_cycles(layer, fits + 1, cfg, cal) == doctest::Approx(2 * over / cal.dram_stream_bytes_per_cycle));
}

TEST_CASE("engine edge cases") {
  SUBCASE("empty network costs nothing") {
    NetworkDescriptor net;
    net.in_h = net.in_w = net.in_c = 1;
    finalize_descriptor(net);
    const auto r = Engine({}, {}, {Fidelity::Functional}).run(net).report;
    CHECK(r.total_latency_s == 0.0);
    CHECK(r.total_energy_j == 0.0);
  }
  SUBCASE("functional mode needs weights") {
    CHECK_THROWS_AS(Engine({}, {}, {Fidelity::Functional}).run(inception_v3()), Error);
  }
  SUBCASE("memory cap is enforced") {
    const auto toy = toy_network(1);
    Engine e({}, {}, {Fidelity::Functional, 1, 1, 1024});
    CHECK(e.functional_footprint(toy) > 1024);
    CHECK_THROWS_AS(e.run(toy, {random_input(toy.in_h, toy.in_w, toy.in_c, 1)}), Error);
  }
  SUBCASE("wrong input shape") {
    const auto toy = toy_network(1);
    CHECK_THROWS_AS(Engine({}, {}, {Fidelity::Functional}).run(toy, {random_input(3, 3, 3, 1)}), Error);
  }
  SUBCASE("zero batch") { CHECK_THROWS_AS(Engine({}, {}, {Fidelity::Analytic, 0}), Error); }
}

TEST_CASE("filters load once per batch") {
  const auto net = inception_v3();
  const auto r1 = Engine({}, {}, {Fidelity::Analytic, 1}).run(net).report;
  const auto r4 = Engine({}, {}, {Fidelity::Analytic, 4}).run(net).report;
  CHECK(r4.phase_seconds.at(Phase::FilterLoad) == doctest::Approx(r1.phase_seconds.at(Phase::FilterLoad)));
  CHECK(r4.phase_seconds.at(Phase::Mac) == doctest::Approx(4 * r1.phase_seconds.at(Phase::Mac)));
}
