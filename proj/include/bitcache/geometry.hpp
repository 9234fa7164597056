#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace bitcache {

/// Shape of the last-level cache and the constants the cost model charges
/// against. Defaults describe a 14-slice, 35 MB Xeon E5-2697 v3 LLC.
struct GeometryConfig {
  std::uint32_t num_slices = 14;
  std::uint32_t ways_per_slice = 20;
  std::uint32_t banks_per_way = 4;
  std::uint32_t arrays_per_bank = 4;
  std::uint32_t wordlines_per_array = 256;
  std::uint32_t bitlines_per_array = 256;
  std::uint32_t reserved_cpu_ways = 1;
  std::uint32_t reserved_io_ways = 1;
  double compute_freq_hz = 2.5e9;
  double access_freq_hz = 4.0e9;
  std::uint32_t intra_slice_bus_bits = 256;
  std::uint32_t quadrant_bus_bits = 64;
  std::uint32_t ring_bits_per_cycle = 256;
  double energy_access_pj = 8.6;
  double energy_compute_pj = 15.4;
  /// Transpose units per slice, each converting one 64-bit column per access cycle.
  std::uint32_t tmus_per_slice = 2;

  /// Throws Error(InvalidConfig) when any invariant is violated.
  void validate() const;

  std::uint64_t array_bytes() const;
  std::uint64_t slice_capacity_bytes() const;
  std::uint64_t total_capacity_bytes() const;
  std::uint32_t arrays_per_way() const { return banks_per_way * arrays_per_bank; }
  std::uint32_t compute_ways_per_slice() const {
    return ways_per_slice - reserved_cpu_ways - reserved_io_ways;
  }
  /// Bytes available in the reserved I/O way(s) across all slices.
  std::uint64_t io_capacity_bytes() const;

  bool operator==(const GeometryConfig&) const = default;
};

/// Raw SIMD lane count: every way of every slice, reserved ways included.
std::uint64_t total_compute_lanes(const GeometryConfig& cfg);

/// Arrays per slice usable for computation once CPU and I/O ways are excluded.
std::uint32_t compute_arrays_per_slice(const GeometryConfig& cfg);

/// Same geometry with the slice count replaced.
GeometryConfig with_slices(GeometryConfig cfg, std::uint32_t slices);

/// Cycle and bandwidth constants that the hardware description alone does not
/// pin down. The movement factors scale the physical bus-occupancy estimates
/// and are fit once against a measured latency breakdown.
struct CostCalibration {
  double cycles_per_mac_8bit = 236.0;
  /// Reduction cycles for a 32-lane (five-step) channel reduction.
  double cycles_reduction_conv = 660.0;
  double move_cycles_per_bit = 1.0;
  double sense_amp_cycling_speedup = 1.0;
  /// Per-serial-step setup charged with the MAC phase (partial-sum clear).
  double mac_setup_cycles = 0.0;
  double dram_filter_bytes_per_cycle = 2.7615892792;
  /// Share of first-layer DRAM fetch time that is not hidden behind on-chip streaming.
  double dram_bound_fraction = 1.0;
  /// Sequential DRAM bandwidth for activation spills (quad-channel DDR4-2133).
  double dram_stream_bytes_per_cycle = 17.0;
  double input_stream_factor = 29.0509173571;
  double output_xfer_factor = 12.2051895433;
  /// When set, MAC and reduction costs come from the bit-serial microcode
  /// formulas instead of the calibrated per-MAC and per-reduction figures.
  bool microcode_costs = false;

  void validate() const;

  /// Costs derived entirely from the bit-array microcode, movement factors kept.
  static CostCalibration microcode_derived();

  bool operator==(const CostCalibration&) const = default;
};

void to_json(nlohmann::json& j, const GeometryConfig& cfg);
void from_json(const nlohmann::json& j, GeometryConfig& cfg);
void to_json(nlohmann::json& j, const CostCalibration& cal);
void from_json(const nlohmann::json& j, CostCalibration& cal);

GeometryConfig load_geometry(const std::string& path);
CostCalibration load_calibration(const std::string& path);

}  // namespace bitcache
