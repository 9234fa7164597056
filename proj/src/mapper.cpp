#include "bitcache/mapper.hpp"

#include <algorithm>
#include <bit>

#include "bitcache/error.hpp"

namespace bitcache {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

const char* to_string(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::FC: return "fc";
  }
  return "?";
}

const char* to_string(Padding p) noexcept { return p == Padding::Same ? "same" : "valid"; }

std::uint32_t LayerDescriptor::out_h() const {
  return padding == Padding::Same ? (H + U - 1) / U : (H - R) / U + 1;
}

std::uint32_t LayerDescriptor::out_w() const {
  return padding == Padding::Same ? (W + U - 1) / U : (W - S) / U + 1;
}

std::uint32_t LayerDescriptor::pad_top() const {
  if (padding == Padding::Valid) return 0;
  const std::int64_t total = std::int64_t{out_h() - 1} * U + R - H;
  return static_cast<std::uint32_t>(std::max<std::int64_t>(0, total) / 2);
}

std::uint32_t LayerDescriptor::pad_left() const {
  if (padding == Padding::Valid) return 0;
  const std::int64_t total = std::int64_t{out_w() - 1} * U + S - W;
  return static_cast<std::uint32_t>(std::max<std::int64_t>(0, total) / 2);
}

std::uint32_t LayerDescriptor::input_bytes_reused() const {
  return R * S - R * std::min(U, S);
}

void LayerDescriptor::validate() const {
  auto bad = [&](const std::string& why) {
    throw Error(ErrorCode::InvalidConfig, "layer " + name + ": " + why);
  };
  if (H == 0 || W == 0 || C == 0 || R == 0 || S == 0 || M == 0 || U == 0)
    bad("dimensions and stride must be positive");
  if (padding == Padding::Valid && (R > H || S > W)) bad("window exceeds the input");
  if ((kind == LayerKind::MaxPool || kind == LayerKind::AvgPool) && M != C)
    bad("pooling keeps the channel count (M must equal C)");
  if (kind == LayerKind::FC && (H != 1 || W != 1 || R != 1 || S != 1))
    bad("fully connected layers are 1x1 over a flattened 1x1 input");
}

LayerDescriptor make_conv(std::string name, std::uint32_t H, std::uint32_t C, std::uint32_t R,
                          std::uint32_t S, std::uint32_t M, std::uint32_t U, Padding pad) {
  LayerDescriptor l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.H = l.W = H;
  l.C = C;
  l.R = R;
  l.S = S;
  l.M = M;
  l.U = U;
  l.padding = pad;
  return l;
}

std::vector<PixelRange> balanced_ranges(std::uint64_t outputs, std::uint32_t parts) {
  std::vector<PixelRange> out(parts);
  if (parts == 0) return out;
  const std::uint64_t base = outputs / parts, extra = outputs % parts;
  std::uint64_t at = 0;
  for (std::uint32_t i = 0; i < parts; ++i) {
    const std::uint64_t n = base + (i < extra ? 1 : 0);
    out[i] = {at, at + n};
    at += n;
  }
  return out;
}

std::vector<PixelRange> partition_outputs(const LayerDescriptor& layer,
                                          const GeometryConfig& cfg) {
  return plan_layer(layer, cfg).per_slice_output_ranges;
}

LayoutPlan plan_layer(const LayerDescriptor& layer, const GeometryConfig& cfg) {
  layer.validate();
  cfg.validate();
  const std::uint32_t ways = cfg.compute_ways_per_slice();
  const std::uint32_t apw = cfg.arrays_per_way();
  const std::uint32_t slices = cfg.num_slices;
  const std::uint32_t bl = cfg.bitlines_per_array;
  const std::uint64_t pixels = layer.out_pixels();

  LayoutPlan p;
  p.layer = layer.name;
  p.kind = layer.kind;

  if (!layer.has_filters()) {
    // One lane per (pixel, channel) output; no filter region.
    p.effective_rs = layer.R * layer.S;
    p.effective_channels = 1;
    p.filters_per_array = bl;
    p.lanes_used_per_array = bl;
    p.filters_per_way = apw * bl;
    p.units = slices;
    p.pixels_per_way = std::max<std::uint32_t>(1, p.filters_per_way / layer.C);
    p.pixels_per_step = std::max<std::uint32_t>(1, ways * p.filters_per_way / layer.C);
    const std::uint64_t lanes = std::uint64_t{ways} * p.filters_per_way;
    const std::uint64_t items = ceil_div(pixels, slices) * layer.C;
    p.steps_per_pass = p.serial_iterations = ceil_div(items, lanes);
    p.parallel_convs = lanes * slices;
    p.conv_count = layer.output_bytes();
    const std::uint64_t busy = std::min<std::uint64_t>(items, lanes);
    p.arrays_active = std::min<std::uint64_t>(pixels, slices) * ceil_div(busy, bl);
  } else {
    const std::uint32_t rs = layer.R * layer.S;
    if (rs == 1)
      p.packing_factor = std::min(16u, layer.C);
    else if (rs < 9)
      p.packing_factor = std::max(1u, std::min(9u / rs, layer.C));
    p.split_factor = rs > 9 ? static_cast<std::uint32_t>(ceil_div(rs, 9)) : 1;
    p.effective_rs =
        rs > 9 ? static_cast<std::uint32_t>(ceil_div(rs, p.split_factor)) : p.packing_factor * rs;
    p.effective_channels =
        static_cast<std::uint32_t>(ceil_div(layer.C, p.packing_factor)) * p.split_factor;
    p.padded_channels = std::bit_ceil(p.effective_channels);

    if (p.padded_channels <= bl) {
      p.filters_per_array = bl / p.padded_channels;
      p.lanes_used_per_array = p.filters_per_array * p.padded_channels;
      p.filters_per_way = apw * p.filters_per_array;
    } else if (p.padded_channels <= 2 * bl && apw >= 2) {
      p.arrays_per_filter = 2;
      p.lanes_used_per_array = bl;
      p.filters_per_way = apw / 2;
    } else {
      throw Error(ErrorCode::Unmappable,
                  "layer " + layer.name + ": " + std::to_string(p.padded_channels) +
                      " padded channels exceed two arrays");
    }
    if (8 * p.effective_rs + 64 > cfg.wordlines_per_array)
      throw Error(ErrorCode::Unmappable, "layer " + layer.name + ": filter region too large");

    const std::uint32_t F = p.filters_per_way, M = layer.M;
    if (M <= F) {
      p.pixels_per_way = F / M;
      p.pixels_per_step = ways * p.pixels_per_way;
    } else {
      const auto wpp = static_cast<std::uint32_t>(ceil_div(M, F));
      p.ways_per_pixel = wpp;
      p.slices_per_unit = static_cast<std::uint32_t>(ceil_div(wpp, ways));
      if (p.slices_per_unit > slices) {
        p.passes = static_cast<std::uint32_t>(ceil_div(wpp, std::uint64_t{slices} * ways));
        p.slices_per_unit = slices;
        p.pixels_per_step = 1;
      } else {
        p.pixels_per_step = p.slices_per_unit * ways / wpp;
      }
    }
    p.units = slices / p.slices_per_unit;
    const std::uint64_t per_unit = ceil_div(pixels, p.units);
    p.steps_per_pass = ceil_div(per_unit, p.pixels_per_step);
    p.serial_iterations = p.passes * p.steps_per_pass;
    p.parallel_convs = std::uint64_t{slices} * ways * F;
    p.conv_count = layer.conv_count();

    // Arrays holding live filter slots in a full step.
    const std::uint64_t px = std::min<std::uint64_t>(p.pixels_per_step, per_unit);
    const std::uint64_t m_live = std::min<std::uint64_t>(M, std::uint64_t{slices} * ways * F);
    std::uint64_t arrays_unit = 0;
    if (p.arrays_per_filter == 2) {
      arrays_unit = 2 * px * m_live;
    } else if (M <= F) {
      const std::uint64_t full = px / p.pixels_per_way, rem = px % p.pixels_per_way;
      arrays_unit = full * ceil_div(std::uint64_t{p.pixels_per_way} * M, p.filters_per_array) +
                    ceil_div(rem * M, p.filters_per_array);
    } else {
      arrays_unit = px * ceil_div(m_live, p.filters_per_array);
    }
    p.arrays_active = std::min<std::uint64_t>(
        std::min<std::uint64_t>(p.units, pixels) * arrays_unit,
        std::uint64_t{slices} * ways * apw);
  }

  if (p.units == 0) p.units = 1;
  const double capacity = static_cast<double>(p.serial_iterations) * p.parallel_convs;
  p.utilization = capacity > 0 ? static_cast<double>(p.conv_count) / capacity : 0.0;

  const auto unit_ranges = balanced_ranges(pixels, p.units);
  p.per_slice_output_ranges.assign(slices, PixelRange{});
  for (std::uint32_t s = 0; s < slices; ++s) {
    const std::uint32_t u = s / p.slices_per_unit;
    if (u < p.units) p.per_slice_output_ranges[s] = unit_ranges[u];
  }
  return p;
}

std::optional<SlotWork> slot_work(const LayoutPlan& plan, const LayerDescriptor& layer,
                                  std::uint32_t unit, std::uint32_t way, std::uint32_t slot,
                                  std::uint64_t step, const GeometryConfig& cfg) {
  if (unit >= plan.units || step >= plan.serial_iterations || slot >= plan.filters_per_way)
    return std::nullopt;
  const std::uint64_t pixels = layer.out_pixels();
  const std::uint64_t base = pixels / plan.units, extra = pixels % plan.units;
  const std::uint64_t begin = unit * base + std::min<std::uint64_t>(unit, extra);
  const std::uint64_t size = base + (unit < extra ? 1 : 0);

  const std::uint64_t pass = step / plan.steps_per_pass;
  const std::uint64_t t = step % plan.steps_per_pass;
  const std::uint32_t F = plan.filters_per_way;
  const std::uint32_t M = layer.M;
  std::uint64_t local = 0, m = 0;
  if (M <= F) {
    const std::uint32_t in_way = slot / M;
    if (in_way >= plan.pixels_per_way) return std::nullopt;
    local = t * plan.pixels_per_step + std::uint64_t{way} * plan.pixels_per_way + in_way;
    m = slot % M;
  } else if (plan.passes > 1) {
    local = t;
    m = pass * std::uint64_t{cfg.num_slices} * cfg.compute_ways_per_slice() * F +
        std::uint64_t{way} * F + slot;
  } else {
    const std::uint32_t pix_slot = way / plan.ways_per_pixel;
    if (pix_slot >= plan.pixels_per_step) return std::nullopt;
    local = t * plan.pixels_per_step + pix_slot;
    m = std::uint64_t{way % plan.ways_per_pixel} * F + slot;
  }
  if (m >= M || local >= size) return std::nullopt;
  return SlotWork{begin + local, static_cast<std::uint32_t>(m)};
}

std::vector<std::optional<Tap>> lane_taps(const LayoutPlan& plan, const LayerDescriptor& layer,
                                          std::uint32_t lane) {
  std::vector<std::optional<Tap>> taps(plan.effective_rs);
  const std::uint32_t rs = layer.R * layer.S;
  if (plan.split_factor > 1) {
    const std::uint32_t ch = lane / plan.split_factor, part = lane % plan.split_factor;
    if (ch >= layer.C) return taps;
    for (std::uint32_t t = 0; t < plan.effective_rs; ++t) {
      const std::uint32_t pos = part * plan.effective_rs + t;
      if (pos < rs) taps[t] = Tap{ch, pos / layer.S, pos % layer.S};
    }
    return taps;
  }
  for (std::uint32_t t = 0; t < plan.effective_rs; ++t) {
    const std::uint32_t ch = lane * plan.packing_factor + t / rs, pos = t % rs;
    if (ch < layer.C) taps[t] = Tap{ch, pos / layer.S, pos % layer.S};
  }
  return taps;
}

RegionAllocation allocate_regions(const LayoutPlan& plan, const GeometryConfig& cfg) {
  const std::uint32_t wl = cfg.wordlines_per_array;
  RegionAllocation r;
  const bool filters = plan.kind == LayerKind::Conv || plan.kind == LayerKind::FC;
  r.filter_rows = filters ? 8 * plan.effective_rs : 0;
  if (r.filter_rows + r.reduction_rows > wl)
    throw Error(ErrorCode::Unmappable, "regions exceed " + std::to_string(wl) + " wordlines");
  r.partial_start = r.filter_start + r.filter_rows;
  r.reduction_start = r.partial_start;
  r.scratch_start = r.partial_start + r.partial_rows;
  r.input_start = r.scratch_start + r.scratch_rows;
  const std::uint32_t avail = wl - r.input_start;
  // Keep enough input rows for the reduction overlay; outputs take the rest.
  const std::uint32_t overlay = r.reduction_rows - r.partial_rows - r.scratch_rows;
  const std::uint64_t want = 8 * plan.serial_iterations;
  const std::uint32_t max_out = avail - overlay;
  r.output_rows = static_cast<std::uint32_t>(std::min<std::uint64_t>(want, max_out));
  r.output_spills = want > max_out;
  r.input_rows = avail - r.output_rows;
  r.output_start = r.input_start + r.input_rows;
  return r;
}

void to_json(nlohmann::json& j, const LayerDescriptor& l) {
  j = {{"name", l.name},   {"group", l.group},        {"kind", to_string(l.kind)},
       {"H", l.H},         {"W", l.W},                {"C", l.C},
       {"R", l.R},         {"S", l.S},                {"M", l.M},
       {"stride", l.U},    {"padding", to_string(l.padding)},
       {"E", l.out_h()},   {"F", l.out_w()},          {"conv_count", l.conv_count()},
       {"relu", l.relu},   {"batchnorm", l.batchnorm}};
}

void to_json(nlohmann::json& j, const LayoutPlan& p) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : p.per_slice_output_ranges) ranges.push_back({r.begin, r.end});
  j = {{"layer", p.layer},
       {"kind", to_string(p.kind)},
       {"effective_rs", p.effective_rs},
       {"packing_factor", p.packing_factor},
       {"split_factor", p.split_factor},
       {"effective_channels", p.effective_channels},
       {"padded_channels", p.padded_channels},
       {"arrays_per_filter", p.arrays_per_filter},
       {"filters_per_array", p.filters_per_array},
       {"convs_per_array", p.convs_per_array()},
       {"lanes_used_per_array", p.lanes_used_per_array},
       {"filters_per_way", p.filters_per_way},
       {"ways_per_pixel", p.ways_per_pixel},
       {"pixels_per_way", p.pixels_per_way},
       {"slices_per_unit", p.slices_per_unit},
       {"units", p.units},
       {"passes", p.passes},
       {"pixels_per_step", p.pixels_per_step},
       {"serial_iterations", p.serial_iterations},
       {"parallel_convs", p.parallel_convs},
       {"arrays_active", p.arrays_active},
       {"conv_count", p.conv_count},
       {"utilization", p.utilization},
       {"per_slice_output_ranges", ranges}};
}

void to_json(nlohmann::json& j, const RegionAllocation& r) {
  auto region = [](std::uint32_t start, std::uint32_t rows) {
    return nlohmann::json{{"start", start}, {"rows", rows}};
  };
  j = {{"filter", region(r.filter_start, r.filter_rows)},
       {"partial_sums", region(r.partial_start, r.partial_rows)},
       {"scratch", region(r.scratch_start, r.scratch_rows)},
       {"reduction", region(r.reduction_start, r.reduction_rows)},
       {"input", region(r.input_start, r.input_rows)},
       {"output", region(r.output_start, r.output_rows)},
       {"output_spills", r.output_spills}};
}

}  // namespace bitcache
