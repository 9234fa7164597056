#include "bitcache/engine.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "bitcache/error.hpp"
#include "bitcache/transpose.hpp"

namespace bitcache {

namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

std::uint32_t log2_exact(std::uint64_t x) { return static_cast<std::uint32_t>(std::countr_zero(x)); }

template <typename T>
std::vector<std::uint64_t> widen(const std::vector<T>& v) {
  return std::vector<std::uint64_t>(v.begin(), v.end());
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, std::uint32_t threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, std::max<std::uint32_t>(1, threads));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

constexpr std::uint32_t kAcc = 32;  // post-processing accumulator width

}  // namespace

const char* to_string(Fidelity f) noexcept {
  return f == Fidelity::Functional ? "functional" : "analytic";
}

QuantParams derive_quant_params(std::uint32_t layer_min, std::uint32_t layer_max) {
  if (layer_min > layer_max) throw Error(ErrorCode::InvalidConfig, "layer min above layer max");
  QuantParams q;
  q.layer_min = layer_min;
  q.layer_max = layer_max;
  if (layer_min == layer_max) return q;
  const std::uint32_t range = layer_max - layer_min;
  const auto bits = static_cast<std::uint32_t>(std::bit_width(range));
  q.pre_shift = bits > 16 ? bits - 16 : 0;
  const std::uint64_t r = range >> q.pre_shift;
  std::uint32_t k = 0;
  while ((255ULL << (k + 1)) / r < (1u << 16)) ++k;
  q.shift = k;
  q.multiplier = static_cast<std::uint32_t>((255ULL << k) / r);
  return q;
}

std::uint8_t quantize_value(std::uint32_t v, const QuantParams& q) {
  if (v <= q.layer_min) return q.zero_point;
  const std::uint64_t x = std::min(v, q.layer_max) - q.layer_min;
  const std::uint64_t round = q.shift > 0 ? 1ULL << (q.shift - 1) : 0;
  return static_cast<std::uint8_t>(((x >> q.pre_shift) * q.multiplier + round) >> q.shift);
}

double load_filters_cycles(const LayerDescriptor& layer, const CostCalibration& cal) {
  return static_cast<double>(layer.filter_bytes()) / cal.dram_filter_bytes_per_cycle;
}

double stream_inputs_cycles(const LayerDescriptor& layer, const LayoutPlan& plan,
                            const GeometryConfig& cfg, const CostCalibration& cal,
                            bool from_dram) {
  const std::uint64_t pixels = layer.out_pixels();
  double bytes = 0.0;
  if (!layer.has_filters()) {
    bytes = static_cast<double>(ceil_div(pixels, cfg.num_slices)) * layer.C * layer.R * layer.S;
  } else {
    const std::uint64_t per_unit = ceil_div(pixels, plan.units);
    const std::uint64_t px = std::min<std::uint64_t>(plan.pixels_per_step, per_unit);
    const double first = static_cast<double>(layer.R) * layer.S * layer.C;
    const double steady = static_cast<double>(layer.R) * std::min(layer.U, layer.S) * layer.C;
    bytes = static_cast<double>(px) * (first + static_cast<double>(plan.serial_iterations - 1) * steady);
    // Filters of one pixel spread over several arrays of a bank: the bank
    // latch duplicates the input, halving bus time.
    if (layer.M > plan.filters_per_array) bytes /= 2.0;
  }
  double cycles = bytes * 8.0 / cfg.intra_slice_bus_bits * cal.input_stream_factor;
  if (from_dram) {
    const auto in = layer.input_bytes();
    cycles += static_cast<double>(in) / cal.dram_filter_bytes_per_cycle * cal.dram_bound_fraction;
    cycles += static_cast<double>(tmu_cycles(in, cfg));
  }
  return cycles;
}

double write_outputs_cycles(const LayerDescriptor& layer, const LayoutPlan& /*plan*/,
                            const GeometryConfig& cfg, const CostCalibration& cal) {
  const double per_slice =
      static_cast<double>(ceil_div(layer.out_pixels(), cfg.num_slices)) * layer.M;
  double cycles = per_slice * 8.0 / cfg.intra_slice_bus_bits;
  // Neighbouring slices need up to R output rows of halo for the next layer.
  if (cfg.num_slices > 1)
    cycles += static_cast<double>(layer.R) * layer.out_w() * layer.M * 8.0 / cfg.ring_bits_per_cycle;
  return cycles * cal.output_xfer_factor;
}

double spill_cycles(const LayerDescriptor& layer, std::uint32_t batch, const GeometryConfig& cfg,
                    const CostCalibration& cal) {
  const std::uint64_t total = std::uint64_t{batch} * layer.output_bytes();
  const std::uint64_t cap = cfg.io_capacity_bytes();
  if (total <= cap) return 0.0;
  return 2.0 * static_cast<double>(total - cap) / cal.dram_stream_bytes_per_cycle;
}

double conv_mac_cycles(const LayoutPlan& plan, const CostCalibration& cal) {
  return static_cast<double>(plan.serial_iterations) *
         (plan.effective_rs * cal.cycles_per_mac_8bit + cal.mac_setup_cycles);
}

double conv_reduction_cycles(const LayoutPlan& plan, const GeometryConfig& cfg,
                             const CostCalibration& cal) {
  double per_step = 0.0;
  if (cal.microcode_costs) {
    const std::uint32_t bl = cfg.bitlines_per_array;
    const std::uint32_t group = std::min(plan.padded_channels, bl);
    per_step = static_cast<double>(microcode::reduce_cycles(24, group, cal));
    if (plan.arrays_per_filter == 2) {
      const auto w = microcode::reduce_result_width(24, bl);
      per_step += static_cast<double>(microcode::move_cycles(w, cal) +
                                      (w < kAcc ? microcode::add_cycles(w) : microcode::accumulate_cycles(w)));
    }
  } else {
    // The calibrated figure covers a 32-lane (five-level) tree; scale per level.
    per_step = cal.cycles_reduction_conv * log2_exact(plan.padded_channels) / 5.0;
  }
  return static_cast<double>(plan.serial_iterations) * per_step;
}

double quant_compute_cycles(const LayoutPlan& plan, const GeometryConfig& cfg,
                            const CostCalibration& cal) {
  using namespace microcode;
  const std::uint64_t slots = plan.serial_iterations;
  if (slots == 0) return 0.0;
  const std::uint64_t mx = max_cycles(kAcc, cal);
  const std::uint64_t levels = log2_exact(cfg.bitlines_per_array);
  const std::uint64_t scan = 2 * (move_cycles(kAcc, cal) + (slots - 1) * mx);
  const std::uint64_t tree = 2 * levels * (move_cycles(kAcc, cal) + mx);
  const std::uint64_t requant = slots * (subtract_cycles(kAcc) + zero_cycles(kAcc) +
                                         multiply_cycles(16) + accumulate_cycles(kAcc) +
                                         move_cycles(8, cal));
  return static_cast<double>(scan + tree + requant);
}

double quant_bus_cycles(const LayoutPlan& plan, const GeometryConfig& cfg) {
  // One 64-bit (min, max) pair per array to the slice, then per slice on the ring.
  const std::uint64_t per_slice = ceil_div(plan.arrays_active, cfg.num_slices);
  double c = static_cast<double>(ceil_div(per_slice * 64, cfg.intra_slice_bus_bits));
  if (cfg.num_slices > 1)
    c += static_cast<double>(ceil_div(std::uint64_t{cfg.num_slices} * 64, cfg.ring_bits_per_cycle));
  return c;
}

std::uint32_t avgpool_sum_width(std::uint32_t window) {
  return static_cast<std::uint32_t>(std::bit_width(255ULL * window));
}

double pool_cycles(const LayerDescriptor& layer, const LayoutPlan& plan, const CostCalibration& cal) {
  using namespace microcode;
  const std::uint32_t rs = layer.R * layer.S;
  std::uint64_t per_step = 0;
  if (layer.kind == LayerKind::MaxPool) {
    per_step = (rs - 1) * max_cycles(8, cal);
  } else if (layer.kind == LayerKind::AvgPool) {
    const std::uint32_t w = avgpool_sum_width(rs);
    per_step = zero_cycles(w) + std::uint64_t{rs} * accumulate_cycles(w) + divide_cycles(w) +
               move_cycles(8, cal);
  }
  return static_cast<double>(plan.serial_iterations * per_step);
}

double post_cycles(const LayerDescriptor& layer, const LayoutPlan& plan) {
  using namespace microcode;
  if (!layer.has_filters()) return 0.0;
  std::uint64_t per_slot = 0;
  if (layer.batchnorm) per_slot += zero_cycles(kAcc) + multiply_cycles(16) + accumulate_cycles(kAcc);
  if (layer.relu) per_slot += relu_cycles(kAcc);
  return static_cast<double>(plan.serial_iterations * per_slot);
}

LayerSchedule schedule_layer(const LayerDescriptor& layer, const LayoutPlan& plan,
                             const GeometryConfig& cfg, const CostCalibration& cal,
                             bool from_dram) {
  LayerSchedule s;
  if (layer.has_filters()) {
    s.mac = conv_mac_cycles(plan, cal);
    s.reduction = conv_reduction_cycles(plan, cfg, cal);
    s.quant_compute = quant_compute_cycles(plan, cfg, cal);
    s.quant_bus = quant_bus_cycles(plan, cfg);
    s.other = post_cycles(layer, plan);
  } else {
    s.pooling = pool_cycles(layer, plan, cal);
  }
  s.input_stream = stream_inputs_cycles(layer, plan, cfg, cal, from_dram);
  s.output_xfer = write_outputs_cycles(layer, plan, cfg, cal);
  return s;
}

double FilterResidency::load(const LayerDescriptor& layer, const CostCalibration& cal) {
  if (!layer.has_filters()) {
    resident_.clear();
    return 0.0;
  }
  if (resident_ == layer.name) return 0.0;
  resident_ = layer.name;
  return load_filters_cycles(layer, cal);
}

namespace exec {

ConvRegions conv_regions(const RegionAllocation& r) {
  return {r.filter_start, r.partial_start, r.scratch_start, r.input_start};
}

ConvStepCycles conv_mac(BitArray& a, const ConvRegions& r,
                        const std::vector<std::vector<std::uint8_t>>& filters,
                        const std::vector<std::vector<std::uint8_t>>& inputs) {
  if (filters.size() != inputs.size())
    throw Error(ErrorCode::WidthMismatch, "filter and input tap counts differ");
  ConvStepCycles c;
  const OperandRegion partial{r.partial_start, 24};
  const OperandRegion product{r.product_start, 16};
  const OperandRegion input{r.input_start, 8};
  for (std::size_t t = 0; t < filters.size(); ++t)
    a.store({r.filter_start + 8 * static_cast<std::uint32_t>(t), 8}, widen(filters[t]));
  c.mac += a.zero_rows(partial.start_wordline, partial.width_bits);
  for (std::size_t t = 0; t < filters.size(); ++t) {
    a.store(input, widen(inputs[t]));
    c.mac += a.zero_rows(product.start_wordline, product.width_bits);
    c.mac += a.multiply({r.filter_start + 8 * static_cast<std::uint32_t>(t), 8}, input, product);
    c.mac += a.accumulate(partial, product);
  }
  return c;
}

OperandRegion conv_reduce(BitArray& a, const ConvRegions& r, std::uint32_t group,
                          std::uint64_t& cycles) {
  const auto res = a.reduce_lanes({r.partial_start, 24}, group, r.partial_start + 32);
  cycles += res.cycles;
  return res.result;
}

OperandRegion conv_combine(BitArray& a, const BitArray& partner, const ConvRegions& r,
                           const OperandRegion& reduced, std::uint64_t& cycles) {
  const std::uint32_t w = reduced.width_bits;
  const OperandRegion imported{r.partial_start + 32, w};
  cycles += a.import_rows(partner, reduced.start_wordline, imported.start_wordline, w);
  if (w < kAcc) {
    const OperandRegion sum{r.partial_start + 64, w + 1};
    cycles += a.add({reduced.start_wordline, w}, imported, sum);
    return sum;
  }
  cycles += a.accumulate({reduced.start_wordline, w}, imported);
  return {reduced.start_wordline, w};
}

std::uint64_t batchnorm_relu(BitArray& a, std::uint32_t base, std::vector<std::uint32_t>& values,
                             const std::vector<std::uint16_t>& scale,
                             const std::vector<std::uint32_t>& bias, std::uint32_t shift,
                             bool relu) {
  std::uint64_t cycles = 0;
  const OperandRegion acc{base, kAcc};
  a.store(acc, widen(values));
  OperandRegion result = acc;
  if (!scale.empty()) {
    if (shift > 16) throw Error(ErrorCode::InvalidConfig, "batch norm shift above 16");
    const OperandRegion k{base + 32, 16}, product{base + 48, kAcc}, b{base + 80, kAcc};
    a.store(k, widen(scale));
    a.store(b, widen(bias));
    cycles += a.zero_rows(product.start_wordline, product.width_bits);
    cycles += a.multiply({base + shift, 16}, k, product);
    cycles += a.accumulate(product, b);
    result = product;
  }
  if (relu) cycles += a.relu(result);
  const auto out = a.load(result);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<std::uint32_t>(out[i]);
  return cycles;
}

MinMax minmax(BitArray& a, std::uint32_t base, const std::vector<std::vector<std::uint32_t>>& slots,
              const std::vector<std::vector<bool>>& valid) {
  MinMax mm;
  if (slots.empty()) return mm;
  const OperandRegion running{base, kAcc}, next{base + 32, kAcc}, diff{base + 64, kAcc + 1};
  auto pass = [&](bool want_max) -> std::uint32_t {
    const std::uint64_t neutral = want_max ? 0 : 0xFFFFFFFFu;
    auto fill = [&](std::size_t s) {
      std::vector<std::uint64_t> v(a.bitlines(), neutral);
      for (std::size_t l = 0; l < v.size() && l < slots[s].size(); ++l)
        if (valid[s][l]) v[l] = slots[s][l];
      return v;
    };
    auto fold = [&] {
      return want_max ? a.elementwise_max(running, next, diff) : a.elementwise_min(running, next, diff);
    };
    a.store(next, fill(0));
    mm.cycles += a.copy_rows(next.start_wordline, running.start_wordline, kAcc, false);
    for (std::size_t s = 1; s < slots.size(); ++s) {
      a.store(next, fill(s));
      mm.cycles += fold();
    }
    for (std::uint32_t stride = 1; stride < a.bitlines(); stride *= 2) {
      mm.cycles += a.move_lanes(running.start_wordline, next.start_wordline, kAcc, stride);
      mm.cycles += fold();
    }
    return static_cast<std::uint32_t>(a.load({running.start_wordline, kAcc, {0, 1}})[0]);
  };
  mm.max = pass(true);
  mm.min = pass(false);
  return mm;
}

std::uint64_t requantize(BitArray& a, std::uint32_t base, const std::vector<std::uint32_t>& values,
                         const QuantParams& q, std::vector<std::uint8_t>& out) {
  std::uint64_t cycles = 0;
  const OperandRegion acc{base, kAcc}, b{base + 32, kAcc}, diff{base + 64, kAcc + 1},
      mult{base + 97, 16}, result{base + 113, 8};
  a.store(acc, widen(values));
  a.store(b, std::vector<std::uint64_t>(a.bitlines(), q.layer_min));
  cycles += a.subtract(acc, b, diff);
  cycles += a.zero_rows(acc.start_wordline, acc.width_bits);
  a.store(mult, std::vector<std::uint64_t>(a.bitlines(), q.multiplier));
  a.store(b, std::vector<std::uint64_t>(a.bitlines(), q.shift > 0 ? 1ULL << (q.shift - 1) : 0));
  cycles += a.multiply({diff.start_wordline + q.pre_shift, 16}, mult, acc);
  cycles += a.accumulate(acc, b);
  cycles += a.copy_rows(base + q.shift, result.start_wordline, 8, false);
  const auto v = a.load(result);
  out.assign(v.begin(), v.end());
  return cycles;
}

std::uint64_t maxpool(BitArray& a, std::uint32_t base,
                      const std::vector<std::vector<std::uint8_t>>& taps,
                      std::vector<std::uint8_t>& out) {
  std::uint64_t cycles = 0;
  const OperandRegion running{base, 8}, next{base + 8, 8}, diff{base + 16, 9};
  a.store(running, widen(taps.at(0)));
  for (std::size_t t = 1; t < taps.size(); ++t) {
    a.store(next, widen(taps[t]));
    cycles += a.elementwise_max(running, next, diff);
  }
  const auto v = a.load(running);
  out.assign(v.begin(), v.end());
  return cycles;
}

std::uint64_t avgpool(BitArray& a, std::uint32_t base,
                      const std::vector<std::vector<std::uint8_t>>& taps,
                      std::vector<std::uint8_t>& out) {
  const auto window = static_cast<std::uint32_t>(taps.size());
  const std::uint32_t w = avgpool_sum_width(window);
  const OperandRegion sum{base, w}, slot{base + w, 8}, divisor{base + w + 8, w},
      quotient{base + 2 * w + 8, w}, scratch{base + 3 * w + 8, 3 * w + 2},
      result{base + 6 * w + 10, 8};
  std::uint64_t cycles = a.zero_rows(sum.start_wordline, w);
  for (const auto& t : taps) {
    a.store(slot, widen(t));
    cycles += a.accumulate(sum, slot);
  }
  a.store(divisor, std::vector<std::uint64_t>(a.bitlines(), window));
  cycles += a.divide(sum, divisor, quotient, scratch).cycles;
  cycles += a.copy_rows(quotient.start_wordline, result.start_wordline, 8, false);
  const auto v = a.load(result);
  out.assign(v.begin(), v.end());
  return cycles;
}

}  // namespace exec

namespace {

struct MeasuredCycles {
  std::uint64_t mac = 0, reduction = 0, quant = 0, pooling = 0, other = 0;
  bool operator==(const MeasuredCycles&) const = default;
};

struct FunctionalLayer {
  Tensor output;
  MeasuredCycles cycles;
  QuantParams quant;
};

std::uint8_t input_at(const Tensor& in, std::int64_t y, std::int64_t x, std::uint32_t ch) {
  if (y < 0 || x < 0 || y >= in.h || x >= in.w) return 0;
  return in.data[(static_cast<std::size_t>(y) * in.w + static_cast<std::size_t>(x)) * in.c + ch];
}

// Concatenates the layer's producers along channels (flattened for FC).
Tensor assemble_input(const NetworkDescriptor& net, std::size_t i, const Tensor& image,
                      const std::map<std::string, Tensor>& acts) {
  std::vector<const Tensor*> srcs;
  for (const auto& s : net.sources[i])
    srcs.push_back(s.network_input ? &image : &acts.at(net.layers[s.layer].layer.name));
  if (srcs.size() == 1 && net.layers[i].layer.kind != LayerKind::FC) return *srcs[0];
  std::uint32_t c = 0;
  for (auto* s : srcs) c += s->c;
  Tensor t(srcs[0]->h, srcs[0]->w, c);
  const std::size_t px = std::size_t{t.h} * t.w;
  for (std::size_t p = 0; p < px; ++p) {
    std::size_t off = p * c;
    for (auto* s : srcs) {
      std::copy_n(s->data.begin() + static_cast<std::ptrdiff_t>(p * s->c), s->c,
                  t.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += s->c;
    }
  }
  if (net.layers[i].layer.kind == LayerKind::FC) {
    t.c = t.h * t.w * t.c;
    t.h = t.w = 1;
  }
  return t;
}

// A leader array plus, for filters spanning two arrays, its partner.
struct ConvJob {
  std::uint32_t slice = 0, way = 0, array = 0;
  std::uint32_t unit = 0, way_in_unit = 0;
  // [step][filter slot in array]
  std::vector<std::vector<std::optional<SlotWork>>> work;
  // Post-processing state, [step][lane].
  std::vector<std::vector<std::uint32_t>> values;
  std::vector<std::vector<bool>> valid;
  MeasuredCycles cycles;
  exec::MinMax mm;
};

void check_lockstep(const std::vector<MeasuredCycles>& all, const std::string& layer) {
  for (const auto& c : all)
    if (!(c == all.front()))
      throw std::logic_error("arrays of layer " + layer + " diverged in cycle count");
}

FunctionalLayer run_conv(const LayerSpec& spec, const LayoutPlan& plan, const GeometryConfig& cfg,
                         const CostCalibration& cal, const Tensor& in, std::uint32_t threads) {
  const auto& l = spec.layer;
  const RegionAllocation regions = allocate_regions(plan, cfg);
  const exec::ConvRegions cr = exec::conv_regions(regions);
  const std::uint32_t bl = cfg.bitlines_per_array;
  const std::uint32_t apw = cfg.arrays_per_way();
  const std::uint32_t ways = cfg.compute_ways_per_slice();
  const std::uint32_t padded = plan.padded_channels;
  const bool paired = plan.arrays_per_filter == 2;
  const std::uint32_t slots_per_array = paired ? 1 : plan.filters_per_array;
  const std::uint32_t group = std::min(padded, bl);
  const std::uint32_t ers = plan.effective_rs;
  const std::uint64_t steps = plan.serial_iterations;
  const std::uint32_t base = regions.partial_start;

  std::vector<std::vector<std::optional<Tap>>> taps(padded);
  for (std::uint32_t lane = 0; lane < padded; ++lane) taps[lane] = lane_taps(plan, l, lane);

  std::vector<ConvJob> jobs;
  for (std::uint32_t s = 0; s < cfg.num_slices; ++s) {
    const std::uint32_t unit = s / plan.slices_per_unit;
    if (unit >= plan.units) continue;
    for (std::uint32_t w = 0; w < ways; ++w)
      for (std::uint32_t a = 0; a < apw; a += paired ? 2 : 1) {
        ConvJob job{s, w, a, unit, (s % plan.slices_per_unit) * ways + w, {}, {}, {}, {}, {}};
        bool busy = false;
        job.work.assign(steps, std::vector<std::optional<SlotWork>>(slots_per_array));
        for (std::uint64_t t = 0; t < steps; ++t)
          for (std::uint32_t j = 0; j < slots_per_array; ++j) {
            const std::uint32_t slot = paired ? a / 2 : a * slots_per_array + j;
            job.work[t][j] = slot_work(plan, l, unit, job.way_in_unit, slot, t, cfg);
            busy |= job.work[t][j].has_value();
          }
        if (busy) jobs.push_back(std::move(job));
      }
  }

  std::vector<std::uint16_t> bn_scale;
  std::vector<std::uint32_t> bn_bias;
  const bool post = spec.bn.has_value() || l.relu;

  // Pass 1: MAC, reduction, batch norm / ReLU and the per-array min/max.
  parallel_for(jobs.size(), threads, [&](std::size_t ji) {
    auto& job = jobs[ji];
    BitArray lead(cfg, cal), partner(cfg, cal);
    job.values.assign(steps, std::vector<std::uint32_t>(bl, 0));
    job.valid.assign(steps, std::vector<bool>(bl, false));
    std::vector<std::vector<std::uint8_t>> f_lead(ers, std::vector<std::uint8_t>(bl)),
        i_lead = f_lead, f_part = f_lead, i_part = f_lead;
    for (std::uint64_t t = 0; t < steps; ++t) {
      for (auto* v : {&f_lead, &i_lead, &f_part, &i_part})
        for (auto& row : *v) std::fill(row.begin(), row.end(), 0);
      for (std::uint32_t j = 0; j < slots_per_array; ++j) {
        const auto& work = job.work[t][j];
        if (!work) continue;
        const std::int64_t oy = static_cast<std::int64_t>(work->pixel / l.out_w());
        const std::int64_t ox = static_cast<std::int64_t>(work->pixel % l.out_w());
        for (std::uint32_t lane = 0; lane < padded; ++lane) {
          std::uint32_t phys = paired ? lane : j * padded + lane;
          auto* fl = &f_lead;
          auto* il = &i_lead;
          if (phys >= bl) {
            phys -= bl;
            fl = &f_part;
            il = &i_part;
          }
          for (std::uint32_t k = 0; k < ers; ++k) {
            const auto& tap = taps[lane][k];
            if (!tap) continue;
            (*fl)[k][phys] =
                spec.weights[((std::size_t{work->m} * l.R + tap->dy) * l.S + tap->dx) * l.C + tap->channel];
            (*il)[k][phys] = input_at(in, oy * l.U + tap->dy - l.pad_top(),
                                      ox * l.U + tap->dx - l.pad_left(), tap->channel);
          }
        }
      }
      job.cycles.mac += exec::conv_mac(lead, cr, f_lead, i_lead).mac;
      OperandRegion sum = exec::conv_reduce(lead, cr, group, job.cycles.reduction);
      if (paired) {
        exec::conv_mac(partner, cr, f_part, i_part);
        std::uint64_t ignored = 0;
        const OperandRegion other = exec::conv_reduce(partner, cr, group, ignored);
        sum = exec::conv_combine(lead, partner, cr, other, job.cycles.reduction);
      }
      const auto lanes = lead.load(sum);
      for (std::uint32_t j = 0; j < slots_per_array; ++j) {
        if (!job.work[t][j]) continue;
        const std::uint32_t leader = paired ? 0 : j * padded;
        job.values[t][leader] = static_cast<std::uint32_t>(lanes[leader]);
        job.valid[t][leader] = true;
      }
    }
    if (post) {
      for (std::uint64_t t = 0; t < steps; ++t) {
        std::vector<std::uint16_t> scale;
        std::vector<std::uint32_t> bias;
        if (spec.bn) {
          scale.assign(bl, 0);
          bias.assign(bl, 0);
          for (std::uint32_t j = 0; j < slots_per_array; ++j) {
            const auto& work = job.work[t][j];
            if (!work) continue;
            const std::uint32_t leader = paired ? 0 : j * padded;
            scale[leader] = spec.bn->scale[work->m];
            bias[leader] = static_cast<std::uint32_t>(spec.bn->bias[work->m]);
          }
        }
        job.cycles.other += exec::batchnorm_relu(lead, base, job.values[t], scale, bias,
                                                 spec.bn ? spec.bn->shift : 0, l.relu);
      }
    }
    job.mm = exec::minmax(lead, base, job.values, job.valid);
    job.cycles.quant += job.mm.cycles;
  });

  // Cross-array min/max reduction; the bus cost is charged analytically.
  std::uint32_t lo = 0xFFFFFFFFu, hi = 0;
  for (const auto& job : jobs) {
    lo = std::min(lo, job.mm.min);
    hi = std::max(hi, job.mm.max);
  }
  FunctionalLayer out;
  out.quant = jobs.empty() ? QuantParams{} : derive_quant_params(lo, hi);
  out.output = Tensor(l.out_h(), l.out_w(), l.M);

  // Pass 2: requantize every slot in place and collect the 8-bit outputs.
  parallel_for(jobs.size(), threads, [&](std::size_t ji) {
    auto& job = jobs[ji];
    BitArray lead(cfg, cal);
    std::vector<std::uint8_t> q;
    for (std::uint64_t t = 0; t < steps; ++t) {
      job.cycles.quant += exec::requantize(lead, base, job.values[t], out.quant, q);
      for (std::uint32_t j = 0; j < slots_per_array; ++j) {
        const auto& work = job.work[t][j];
        if (!work) continue;
        out.output.data[work->pixel * l.M + work->m] = q[paired ? 0 : j * padded];
      }
    }
  });

  std::vector<MeasuredCycles> all;
  for (const auto& job : jobs) all.push_back(job.cycles);
  if (!all.empty()) {
    check_lockstep(all, l.name);
    out.cycles = all.front();
  }
  return out;
}

FunctionalLayer run_pool(const LayerSpec& spec, const LayoutPlan& plan, const GeometryConfig& cfg,
                         const CostCalibration& cal, const Tensor& in, std::uint32_t threads) {
  const auto& l = spec.layer;
  const std::uint32_t bl = cfg.bitlines_per_array;
  const std::uint32_t apw = cfg.arrays_per_way();
  const std::uint64_t lanes_per_step = std::uint64_t{cfg.compute_ways_per_slice()} * apw * bl;
  const std::uint64_t steps = plan.serial_iterations;
  const std::uint32_t rs = l.R * l.S;

  struct PoolJob {
    std::uint32_t slice, array;  // array index within the slice's compute ways
    std::uint64_t cycles = 0;
  };
  std::vector<PoolJob> jobs;
  for (std::uint32_t s = 0; s < cfg.num_slices; ++s) {
    const auto items = plan.per_slice_output_ranges[s].size() * l.C;
    const std::uint64_t arrays = std::min<std::uint64_t>(ceil_div(items, bl), lanes_per_step / bl);
    for (std::uint32_t a = 0; a < arrays; ++a) jobs.push_back({s, a});
  }

  FunctionalLayer out;
  out.output = Tensor(l.out_h(), l.out_w(), l.C);
  parallel_for(jobs.size(), threads, [&](std::size_t ji) {
    auto& job = jobs[ji];
    const auto range = plan.per_slice_output_ranges[job.slice];
    const std::uint64_t items = range.size() * l.C;
    BitArray arr(cfg, cal);
    std::vector<std::vector<std::uint8_t>> taps(rs, std::vector<std::uint8_t>(bl));
    std::vector<std::uint8_t> result;
    for (std::uint64_t t = 0; t < steps; ++t) {
      const std::uint64_t first = t * lanes_per_step + std::uint64_t{job.array} * bl;
      for (auto& row : taps) std::fill(row.begin(), row.end(), 0);
      for (std::uint32_t lane = 0; lane < bl; ++lane) {
        const std::uint64_t item = first + lane;
        if (item >= items) break;
        const std::uint64_t pixel = range.begin + item / l.C;
        const auto ch = static_cast<std::uint32_t>(item % l.C);
        const std::int64_t oy = static_cast<std::int64_t>(pixel / l.out_w());
        const std::int64_t ox = static_cast<std::int64_t>(pixel % l.out_w());
        for (std::uint32_t k = 0; k < rs; ++k)
          taps[k][lane] = input_at(in, oy * l.U + k / l.S - l.pad_top(),
                                   ox * l.U + k % l.S - l.pad_left(), ch);
      }
      job.cycles += l.kind == LayerKind::MaxPool ? exec::maxpool(arr, 0, taps, result)
                                                 : exec::avgpool(arr, 0, taps, result);
      for (std::uint32_t lane = 0; lane < bl; ++lane) {
        const std::uint64_t item = first + lane;
        if (item >= items) break;
        out.output.data[(range.begin + item / l.C) * l.C + item % l.C] = result[lane];
      }
    }
  });
  for (const auto& job : jobs)
    if (job.cycles != jobs.front().cycles)
      throw std::logic_error("arrays of layer " + l.name + " diverged in cycle count");
  if (!jobs.empty()) out.cycles.pooling = jobs.front().cycles;
  return out;
}

}  // namespace

Engine::Engine(GeometryConfig cfg, CostCalibration cal, ExecutionMode mode)
    : cfg_(std::move(cfg)), cal_(cal), mode_(mode) {
  cfg_.validate();
  cal_.validate();
  if (mode_.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be at least 1");
}

std::uint64_t Engine::functional_footprint(const NetworkDescriptor& net) const {
  std::uint64_t bytes = cfg_.total_capacity_bytes();
  std::uint64_t acts = std::uint64_t{net.in_h} * net.in_w * net.in_c;
  std::uint64_t state = 0;
  for (const auto& s : net.layers) {
    acts += s.layer.output_bytes();
    bytes += s.layer.filter_bytes();
    if (s.layer.has_filters()) {
      const auto plan = plan_layer(s.layer, cfg_);
      // Per-array slot values and valid flags for every serial step.
      state = std::max(state, plan.arrays_active * plan.serial_iterations * cfg_.bitlines_per_array * 5);
    }
  }
  return bytes + acts * mode_.batch_size + state;
}

RunResult Engine::run(const NetworkDescriptor& net, const std::vector<Tensor>& inputs) {
  const bool functional = mode_.fidelity == Fidelity::Functional;
  const std::uint32_t n = mode_.batch_size;
  const std::uint32_t threads =
      mode_.threads ? mode_.threads : std::max(1u, std::thread::hardware_concurrency());
  RunResult result;
  std::vector<Tensor> images;
  if (functional && !net.layers.empty()) {
    if (!net.has_weights())
      throw Error(ErrorCode::MissingInput, "functional mode needs weights for every conv and fc layer");
    images = inputs;
    if (images.empty() && !net.input_path.empty()) images.push_back(to_activation(read_tensor(net.input_path)));
    if (images.empty()) throw Error(ErrorCode::MissingInput, "functional mode needs an input tensor");
    if (images.size() != 1 && images.size() != n)
      throw Error(ErrorCode::ShapeMismatch, "need one input or one per batch image");
    for (const auto& im : images)
      if (im.h != net.in_h || im.w != net.in_w || im.c != net.in_c)
        throw Error(ErrorCode::ShapeMismatch, "input tensor does not match the descriptor");
    const auto need = functional_footprint(net);
    if (need > mode_.memory_cap_bytes)
      throw Error(ErrorCode::InvalidConfig, "functional run needs about " + std::to_string(need) +
                                                " bytes of host memory, cap is " +
                                                std::to_string(mode_.memory_cap_bytes));
    result.activations.resize(n);
  }

  FilterResidency residency;
  std::vector<LayerReport> layers;
  const std::uint64_t slices = cfg_.num_slices;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.layers[i];
    const auto& l = spec.layer;
    const LayoutPlan plan = plan_layer(l, cfg_);
    bool from_dram = false;
    for (const auto& s : net.sources[i]) from_dram |= s.network_input;
    const LayerSchedule sched = schedule_layer(l, plan, cfg_, cal_, from_dram);

    double mac = sched.mac * n, red = sched.reduction * n, quant = sched.quant_compute * n,
           pool = sched.pooling * n, other = sched.other * n;
    if (functional) {
      mac = red = quant = pool = other = 0;
      for (std::uint32_t b = 0; b < n; ++b) {
        auto& acts = result.activations[b];
        const Tensor in = assemble_input(net, i, images[images.size() == 1 ? 0 : b], acts);
        FunctionalLayer fl = l.has_filters() ? run_conv(spec, plan, cfg_, cal_, in, threads)
                                             : run_pool(spec, plan, cfg_, cal_, in, threads);
        mac += static_cast<double>(fl.cycles.mac);
        red += static_cast<double>(fl.cycles.reduction);
        quant += static_cast<double>(fl.cycles.quant);
        pool += static_cast<double>(fl.cycles.pooling);
        other += static_cast<double>(fl.cycles.other);
        if (l.has_filters() && b == 0) result.quant[l.name] = fl.quant;
        acts[l.name] = std::move(fl.output);
      }
    }

    LayerReport lr;
    lr.name = l.name;
    lr.group = l.group;
    lr.kind = l.kind;
    lr.serial_iterations = plan.serial_iterations;
    lr.arrays_active = plan.arrays_active;
    lr.utilization = plan.utilization;
    const auto arrays = plan.arrays_active;
    lr.phases.push_back(make_phase(Phase::FilterLoad, residency.load(l, cal_), slices, cfg_));
    lr.phases.push_back(make_phase(Phase::InputStream, sched.input_stream * n, slices, cfg_));
    lr.phases.push_back(make_phase(Phase::OutputXfer,
                                   sched.output_xfer * n + spill_cycles(l, n, cfg_, cal_), slices, cfg_));
    lr.phases.push_back(make_phase(Phase::Mac, mac, arrays, cfg_));
    lr.phases.push_back(make_phase(Phase::Reduction, red, arrays, cfg_));
    lr.phases.push_back(make_phase(Phase::Quantization, quant, arrays, cfg_));
    lr.phases.push_back(make_phase(Phase::Quantization, sched.quant_bus * n, slices, cfg_, Domain::Access));
    lr.phases.push_back(make_phase(Phase::Pooling, pool, arrays, cfg_));
    lr.phases.push_back(make_phase(Phase::Other, other, arrays, cfg_));
    layers.push_back(std::move(lr));
  }
  result.report = aggregate(std::move(layers), n, cfg_, net.name);
  return result;
}

}  // namespace bitcache
