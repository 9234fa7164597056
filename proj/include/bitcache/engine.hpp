#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bitcache/bitarray.hpp"
#include "bitcache/costmodel.hpp"
#include "bitcache/geometry.hpp"
#include "bitcache/mapper.hpp"
#include "bitcache/model_io.hpp"

namespace bitcache {

enum class Fidelity { Functional, Analytic };

const char* to_string(Fidelity f) noexcept;

struct ExecutionMode {
  Fidelity fidelity = Fidelity::Analytic;
  std::uint32_t batch_size = 1;
  /// Worker threads for functional runs; 0 picks the hardware concurrency.
  std::uint32_t threads = 0;
  /// Functional runs refuse to start above this host-memory estimate.
  std::uint64_t memory_cap_bytes = 1ULL << 30;
};

/// Requantization constants for one layer. The host turns the layer's
/// (min, max) into q = (((v - min) >> pre_shift) * multiplier + 2^(shift-1)) >> shift.
struct QuantParams {
  std::uint32_t layer_min = 0;
  std::uint32_t layer_max = 0;
  std::uint32_t multiplier = 0;
  std::uint32_t shift = 1;
  std::uint32_t pre_shift = 0;
  std::uint8_t zero_point = 0;
};

QuantParams derive_quant_params(std::uint32_t layer_min, std::uint32_t layer_max);
/// Host evaluation of the requantization formula.
std::uint8_t quantize_value(std::uint32_t v, const QuantParams& q);

/// Per-image cycle counts of one layer, in the shape both fidelities report.
/// Compute-domain entries are in compute cycles, movement entries in access cycles.
struct LayerSchedule {
  double mac = 0, reduction = 0, quant_compute = 0, pooling = 0, other = 0;
  double quant_bus = 0;
  double input_stream = 0, output_xfer = 0;
};

// Movement model. All results are access-clock cycles.
double load_filters_cycles(const LayerDescriptor& layer, const CostCalibration& cal);
double stream_inputs_cycles(const LayerDescriptor& layer, const LayoutPlan& plan,
                            const GeometryConfig& cfg, const CostCalibration& cal, bool from_dram);
double write_outputs_cycles(const LayerDescriptor& layer, const LayoutPlan& plan,
                            const GeometryConfig& cfg, const CostCalibration& cal);
/// DRAM round trip for batch outputs that overflow the I/O way(s); 0 when they fit.
double spill_cycles(const LayerDescriptor& layer, std::uint32_t batch, const GeometryConfig& cfg,
                    const CostCalibration& cal);

// Compute schedule, per image. Each matches the microcode the functional mode issues.
double conv_mac_cycles(const LayoutPlan& plan, const CostCalibration& cal);
double conv_reduction_cycles(const LayoutPlan& plan, const GeometryConfig& cfg,
                             const CostCalibration& cal);
double quant_compute_cycles(const LayoutPlan& plan, const GeometryConfig& cfg,
                            const CostCalibration& cal);
double quant_bus_cycles(const LayoutPlan& plan, const GeometryConfig& cfg);
double pool_cycles(const LayerDescriptor& layer, const LayoutPlan& plan, const CostCalibration& cal);
double post_cycles(const LayerDescriptor& layer, const LayoutPlan& plan);
/// Width of the avg-pool running sum: bits(255 * window).
std::uint32_t avgpool_sum_width(std::uint32_t window);

LayerSchedule schedule_layer(const LayerDescriptor& layer, const LayoutPlan& plan,
                             const GeometryConfig& cfg, const CostCalibration& cal,
                             bool from_dram);

/// Tracks which layer's filters sit in the compute arrays. Reloading the
/// resident layer is free.
class FilterResidency {
 public:
  double load(const LayerDescriptor& layer, const CostCalibration& cal);
  void evict() { resident_.clear(); }
  const std::string& resident() const { return resident_; }

 private:
  std::string resident_;
};

/// In-array building blocks of the functional mode. Vectors hold one entry
/// per bit line of the array; each call returns the cycles it charged.
/// Post-processing and pooling work in the rows from `base` upward (at most 128).
namespace exec {

/// Word lines of one conv step: filter taps, 24-bit partial sums, 16-bit
/// product, an 8-bit input slot, and the reduction overlay.
struct ConvRegions {
  std::uint32_t filter_start = 0;
  std::uint32_t partial_start = 0;
  std::uint32_t product_start = 0;
  std::uint32_t input_start = 0;
};

ConvRegions conv_regions(const RegionAllocation& r);

struct ConvStepCycles {
  std::uint64_t mac = 0;
  std::uint64_t reduction = 0;
};

/// Clears the 24-bit partial sums and runs one 8-bit MAC per tap.
/// filters/inputs are [tap][lane].
ConvStepCycles conv_mac(BitArray& a, const ConvRegions& r,
                        const std::vector<std::vector<std::uint8_t>>& filters,
                        const std::vector<std::vector<std::uint8_t>>& inputs);
/// Lane-tree reduction in groups of `group` lanes; returns the widened result region.
OperandRegion conv_reduce(BitArray& a, const ConvRegions& r, std::uint32_t group,
                          std::uint64_t& cycles);
/// Folds the partner array's reduced sums into `a` (filters spanning two arrays).
OperandRegion conv_combine(BitArray& a, const BitArray& partner, const ConvRegions& r,
                           const OperandRegion& reduced, std::uint64_t& cycles);

/// Batch norm (when scale is non-empty) then ReLU (when relu) on 32-bit lanes.
std::uint64_t batchnorm_relu(BitArray& a, std::uint32_t base, std::vector<std::uint32_t>& values,
                             const std::vector<std::uint16_t>& scale,
                             const std::vector<std::uint32_t>& bias, std::uint32_t shift,
                             bool relu);

struct MinMax {
  std::uint32_t min = 0xFFFFFFFFu;
  std::uint32_t max = 0;
  std::uint64_t cycles = 0;
};

/// Min and max over every valid (slot, lane) value: per-lane scans over the
/// slots, then a lane tree. slots/valid are [slot][lane].
MinMax minmax(BitArray& a, std::uint32_t base, const std::vector<std::vector<std::uint32_t>>& slots,
              const std::vector<std::vector<bool>>& valid);

/// Requantizes one slot of 32-bit lanes to 8 bits.
std::uint64_t requantize(BitArray& a, std::uint32_t base, const std::vector<std::uint32_t>& values,
                         const QuantParams& q, std::vector<std::uint8_t>& out);

/// taps are [tap][lane]; padding positions carry 0.
std::uint64_t maxpool(BitArray& a, std::uint32_t base, const std::vector<std::vector<std::uint8_t>>& taps,
                      std::vector<std::uint8_t>& out);
std::uint64_t avgpool(BitArray& a, std::uint32_t base, const std::vector<std::vector<std::uint8_t>>& taps,
                      std::vector<std::uint8_t>& out);

}  // namespace exec

struct RunResult {
  RunReport report;
  /// Functional runs: every layer's output per batch image.
  std::vector<std::map<std::string, Tensor>> activations;
  /// Functional runs: requantization constants per conv/FC layer.
  std::map<std::string, QuantParams> quant;
};

/// Runs whole networks layer by layer, branches in descriptor order, with the
/// batch as the inner loop so each layer's filters load once per batch.
class Engine {
 public:
  Engine(GeometryConfig cfg, CostCalibration cal, ExecutionMode mode);

  /// Analytic mode ignores `inputs`. Functional mode needs weights and one
  /// input per batch image (a single input is reused for every image).
  RunResult run(const NetworkDescriptor& net, const std::vector<Tensor>& inputs = {});

  /// Host-memory estimate of a functional run.
  std::uint64_t functional_footprint(const NetworkDescriptor& net) const;

  const GeometryConfig& geometry() const { return cfg_; }
  const CostCalibration& calibration() const { return cal_; }
  const ExecutionMode& mode() const { return mode_; }

 private:
  GeometryConfig cfg_;
  CostCalibration cal_;
  ExecutionMode mode_;
};

}  // namespace bitcache
