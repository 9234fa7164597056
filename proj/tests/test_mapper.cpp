#include <doctest.h>

#include <set>

#include "bitcache/error.hpp"
#include "bitcache/mapper.hpp"
#include "bitcache/model_io.hpp"

using namespace bitcache;

namespace {

GeometryConfig tiny() {
  GeometryConfig g;
  g.num_slices = 1;
  g.ways_per_slice = 3;
  g.banks_per_way = 1;
  g.arrays_per_bank = 1;
  g.reserved_cpu_ways = 1;
  g.reserved_io_ways = 1;
  g.intra_slice_bus_bits = 64;
  g.quadrant_bus_bits = 16;
  return g;
}

}  // namespace

TEST_CASE("lane counts") {
  CHECK(total_compute_lanes(GeometryConfig{}) == 1146880);
  CHECK(total_compute_lanes(with_slices({}, 18)) == 1474560);
  CHECK(compute_arrays_per_slice(GeometryConfig{}) == 288);
}

TEST_CASE("3x3 layer with 128 channels holds two filters per array") {
  const auto layer = make_conv("fig8", 32, 128, 3, 3, 32);
  const auto plan = plan_layer(layer, {});
  CHECK(plan.padded_channels == 128);
  CHECK(plan.filters_per_array == 2);
  CHECK(plan.filters_per_way == 32);
  CHECK(plan.parallel_convs / 14 == 18 * 32);
  CHECK(plan.pixels_per_way == 1);
}

TEST_CASE("Conv2D_2b_3x3 golden numbers") {
  const auto layer = make_conv("Conv2D_2b_3x3", 147, 32, 3, 3, 64);
  const auto plan = plan_layer(layer, {});
  CHECK(plan.parallel_convs == 32256);
  CHECK(plan.serial_iterations == 43);
  CHECK(plan.utilization == doctest::Approx(0.997).epsilon(0.001));
  CHECK(plan.conv_count == 1382976);
  CHECK(plan.arrays_active == 4032);
}

TEST_CASE("packing and splitting") {
  SUBCASE("1x1 with 64 channels packs 16 per bit line") {
    const auto plan = plan_layer(make_conv("p", 35, 64, 1, 1, 64), {});
    CHECK(plan.packing_factor == 16);
    CHECK(plan.effective_rs == 16);
    CHECK(plan.padded_channels == 4);
  }
  SUBCASE("3x1 packs three channels") {
    const auto plan = plan_layer(make_conv("p", 8, 384, 3, 1, 384), {});
    CHECK(plan.packing_factor == 3);
    CHECK(plan.effective_rs == 9);
    CHECK(plan.padded_channels == 128);
  }
  SUBCASE("5x5 splits over three bit lines") {
    const auto plan = plan_layer(make_conv("s", 35, 48, 5, 5, 64), {});
    CHECK(plan.split_factor == 3);
    CHECK(plan.effective_rs == 9);
    CHECK(plan.padded_channels == 256);
    CHECK(plan.filters_per_array == 1);
  }
  SUBCASE("512 padded channels span two arrays") {
    const auto plan = plan_layer(make_conv("w", 17, 288, 3, 3, 384, 2, Padding::Valid), {});
    CHECK(plan.arrays_per_filter == 2);
    CHECK(plan.convs_per_array() == 0.5);
  }
  SUBCASE("more than two arrays is unmappable") {
    CHECK_THROWS_AS(plan_layer(make_conv("u", 8, 600, 3, 3, 8), {}), Error);
  }
}

TEST_CASE("lane taps cover every filter byte exactly once") {
  for (const auto& layer : {make_conv("a", 9, 7, 3, 3, 4), make_conv("b", 9, 20, 1, 1, 4),
                            make_conv("c", 9, 5, 5, 5, 4), make_conv("d", 9, 6, 1, 3, 4),
                            make_conv("e", 9, 3, 7, 1, 2)}) {
    const auto plan = plan_layer(layer, {});
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> seen;
    std::size_t count = 0;
    for (std::uint32_t lane = 0; lane < plan.padded_channels; ++lane)
      for (const auto& t : lane_taps(plan, layer, lane))
        if (t) {
          seen.insert({t->channel, t->dy, t->dx});
          ++count;
        }
    CHECK(count == layer.filter_bytes() / layer.M);
    CHECK(seen.size() == count);
  }
}

TEST_CASE("every output is assigned exactly once") {
  const GeometryConfig cfgs[] = {tiny(), GeometryConfig{}, with_slices({}, 3)};
  const LayerDescriptor layers[] = {
      make_conv("small", 6, 3, 3, 3, 5),
      make_conv("wide_m", 5, 16, 1, 1, 300),
      make_conv("stride", 9, 4, 3, 3, 6, 2, Padding::Valid),
      make_conv("two_arrays", 4, 300, 3, 3, 10),
  };
  for (const auto& cfg : cfgs)
    for (const auto& layer : layers) {
      LayoutPlan plan;
      try {
        plan = plan_layer(layer, cfg);
      } catch (const Error&) {
        continue;
      }
      std::vector<int> hits(layer.out_pixels() * layer.M, 0);
      const std::uint32_t ways = cfg.compute_ways_per_slice() * plan.slices_per_unit;
      for (std::uint32_t u = 0; u < plan.units; ++u)
        for (std::uint32_t w = 0; w < ways; ++w)
          for (std::uint32_t s = 0; s < plan.filters_per_way; ++s)
            for (std::uint64_t t = 0; t < plan.serial_iterations; ++t)
              if (auto work = slot_work(plan, layer, u, w, s, t, cfg)) ++hits[work->pixel * layer.M + work->m];
      CHECK_MESSAGE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }), layer.name);
    }
}

TEST_CASE("balanced partitions") {
  auto r = balanced_ranges(196, 14);
  CHECK(std::all_of(r.begin(), r.end(), [](const PixelRange& p) { return p.size() == 14; }));
  r = balanced_ranges(100, 14);
  for (const auto& p : r) CHECK((p.size() == 7 || p.size() == 8));
  CHECK(r.back().end == 100);
  r = balanced_ranges(3, 5);
  CHECK(r[3].size() == 0);
}

TEST_CASE("region allocation") {
  const auto plan = plan_layer(make_conv("Conv2D_2b_3x3", 147, 32, 3, 3, 64), {});
  const auto r = allocate_regions(plan, {});
  CHECK(r.filter_rows == 72);
  CHECK(r.partial_rows == 24);
  CHECK(r.scratch_rows == 16);
  CHECK(r.partial_start == 72);
  CHECK(r.total_rows() == 256);
  CHECK(r.output_spills);

  LayerDescriptor pool;
  pool.name = "pool";
  pool.kind = LayerKind::MaxPool;
  pool.H = pool.W = 9;
  pool.C = pool.M = 4;
  pool.R = pool.S = 3;
  const auto pr = allocate_regions(plan_layer(pool, {}), {});
  CHECK(pr.filter_rows == 0);
}

TEST_CASE("every Inception v3 layer maps on the default cache") {
  const auto net = inception_v3();
  for (const auto& s : net.layers) {
    const auto plan = plan_layer(s.layer, {});
    CHECK(plan.serial_iterations > 0);
    CHECK(plan.utilization <= 1.0);
    CHECK(plan.arrays_active <= 14u * 288u);
    CHECK_NOTHROW(allocate_regions(plan, {}));
  }
}
