#include "bitcache/geometry.hpp"

#include <fstream>
#include <set>

#include "bitcache/error.hpp"

namespace bitcache {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig: return "invalid config";
    case ErrorCode::RowOutOfRange: return "row out of range";
    case ErrorCode::RegionOverlap: return "region overlap";
    case ErrorCode::WidthMismatch: return "width mismatch";
    case ErrorCode::NotZeroed: return "region not zeroed";
    case ErrorCode::InsufficientScratch: return "insufficient scratch";
    case ErrorCode::NotPowerOfTwo: return "not a power of two";
    case ErrorCode::Unmappable: return "unmappable layer";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::MissingInput: return "missing input";
    case ErrorCode::Schema: return "schema violation";
    case ErrorCode::Io: return "i/o error";
  }
  return "unknown";
}

void GeometryConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (num_slices == 0 || ways_per_slice == 0 || banks_per_way == 0 || arrays_per_bank == 0)
    fail("hierarchy counts must be positive");
  if (wordlines_per_array == 0 || bitlines_per_array == 0) fail("array dimensions must be positive");
  if (bitlines_per_array % 64 != 0) fail("bitlines_per_array must be a multiple of 64");
  if (reserved_cpu_ways + reserved_io_ways >= ways_per_slice)
    fail("reserved ways must leave at least one compute way");
  if (compute_freq_hz <= 0 || access_freq_hz <= 0) fail("frequencies must be positive");
  if (intra_slice_bus_bits == 0 || quadrant_bus_bits == 0 || ring_bits_per_cycle == 0)
    fail("bus widths must be positive");
  if (intra_slice_bus_bits != 4 * quadrant_bus_bits)
    fail("intra_slice_bus_bits must equal four quadrant buses");
  if (energy_access_pj < 0 || energy_compute_pj < 0) fail("energies must be non-negative");
  if (tmus_per_slice == 0) fail("tmus_per_slice must be positive");
}

std::uint64_t GeometryConfig::array_bytes() const {
  return std::uint64_t{wordlines_per_array} * bitlines_per_array / 8;
}

std::uint64_t GeometryConfig::slice_capacity_bytes() const {
  return std::uint64_t{ways_per_slice} * arrays_per_way() * array_bytes();
}

std::uint64_t GeometryConfig::total_capacity_bytes() const {
  return slice_capacity_bytes() * num_slices;
}

std::uint64_t GeometryConfig::io_capacity_bytes() const {
  return std::uint64_t{num_slices} * reserved_io_ways * arrays_per_way() * array_bytes();
}

std::uint64_t total_compute_lanes(const GeometryConfig& cfg) {
  return std::uint64_t{cfg.num_slices} * cfg.ways_per_slice * cfg.banks_per_way *
         cfg.arrays_per_bank * cfg.bitlines_per_array;
}

std::uint32_t compute_arrays_per_slice(const GeometryConfig& cfg) {
  return cfg.compute_ways_per_slice() * cfg.banks_per_way * cfg.arrays_per_bank;
}

GeometryConfig with_slices(GeometryConfig cfg, std::uint32_t slices) {
  cfg.num_slices = slices;
  cfg.validate();
  return cfg;
}

void CostCalibration::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw Error(ErrorCode::InvalidConfig, std::string(name) + " must be positive");
  };
  positive(cycles_per_mac_8bit, "cycles_per_mac_8bit");
  positive(cycles_reduction_conv, "cycles_reduction_conv");
  positive(move_cycles_per_bit, "move_cycles_per_bit");
  positive(dram_filter_bytes_per_cycle, "dram_filter_bytes_per_cycle");
  positive(dram_bound_fraction, "dram_bound_fraction");
  positive(dram_stream_bytes_per_cycle, "dram_stream_bytes_per_cycle");
  positive(input_stream_factor, "input_stream_factor");
  positive(output_xfer_factor, "output_xfer_factor");
  if (sense_amp_cycling_speedup < 1.0)
    throw Error(ErrorCode::InvalidConfig, "sense_amp_cycling_speedup must be >= 1");
  if (mac_setup_cycles < 0) throw Error(ErrorCode::InvalidConfig, "mac_setup_cycles must be >= 0");
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Schema, std::string("field '") + key + "': " + e.what());
    }
  }
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::Schema, std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key))
      throw Error(ErrorCode::Schema, std::string("unknown ") + what + " field '" + key + "'");
  }
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Schema, path + ": " + e.what());
  }
}

}  // namespace

void to_json(nlohmann::json& j, const GeometryConfig& c) {
  j = {{"num_slices", c.num_slices},
       {"ways_per_slice", c.ways_per_slice},
       {"banks_per_way", c.banks_per_way},
       {"arrays_per_bank", c.arrays_per_bank},
       {"wordlines_per_array", c.wordlines_per_array},
       {"bitlines_per_array", c.bitlines_per_array},
       {"reserved_cpu_ways", c.reserved_cpu_ways},
       {"reserved_io_ways", c.reserved_io_ways},
       {"compute_freq_hz", c.compute_freq_hz},
       {"access_freq_hz", c.access_freq_hz},
       {"intra_slice_bus_bits", c.intra_slice_bus_bits},
       {"quadrant_bus_bits", c.quadrant_bus_bits},
       {"ring_bits_per_cycle", c.ring_bits_per_cycle},
       {"energy_access_pj", c.energy_access_pj},
       {"energy_compute_pj", c.energy_compute_pj},
       {"tmus_per_slice", c.tmus_per_slice}};
}

void from_json(const nlohmann::json& j, GeometryConfig& c) {
  reject_unknown(j,
                 {"num_slices", "ways_per_slice", "banks_per_way", "arrays_per_bank",
                  "wordlines_per_array", "bitlines_per_array", "reserved_cpu_ways",
                  "reserved_io_ways", "compute_freq_hz", "access_freq_hz", "intra_slice_bus_bits",
                  "quadrant_bus_bits", "ring_bits_per_cycle", "energy_access_pj",
                  "energy_compute_pj", "tmus_per_slice"},
                 "geometry");
  read_field(j, "num_slices", c.num_slices);
  read_field(j, "ways_per_slice", c.ways_per_slice);
  read_field(j, "banks_per_way", c.banks_per_way);
  read_field(j, "arrays_per_bank", c.arrays_per_bank);
  read_field(j, "wordlines_per_array", c.wordlines_per_array);
  read_field(j, "bitlines_per_array", c.bitlines_per_array);
  read_field(j, "reserved_cpu_ways", c.reserved_cpu_ways);
  read_field(j, "reserved_io_ways", c.reserved_io_ways);
  read_field(j, "compute_freq_hz", c.compute_freq_hz);
  read_field(j, "access_freq_hz", c.access_freq_hz);
  read_field(j, "intra_slice_bus_bits", c.intra_slice_bus_bits);
  read_field(j, "quadrant_bus_bits", c.quadrant_bus_bits);
  read_field(j, "ring_bits_per_cycle", c.ring_bits_per_cycle);
  read_field(j, "energy_access_pj", c.energy_access_pj);
  read_field(j, "energy_compute_pj", c.energy_compute_pj);
  read_field(j, "tmus_per_slice", c.tmus_per_slice);
}

void to_json(nlohmann::json& j, const CostCalibration& c) {
  j = {{"cycles_per_mac_8bit", c.cycles_per_mac_8bit},
       {"cycles_reduction_conv", c.cycles_reduction_conv},
       {"move_cycles_per_bit", c.move_cycles_per_bit},
       {"sense_amp_cycling_speedup", c.sense_amp_cycling_speedup},
       {"mac_setup_cycles", c.mac_setup_cycles},
       {"dram_filter_bytes_per_cycle", c.dram_filter_bytes_per_cycle},
       {"dram_bound_fraction", c.dram_bound_fraction},
       {"dram_stream_bytes_per_cycle", c.dram_stream_bytes_per_cycle},
       {"input_stream_factor", c.input_stream_factor},
       {"output_xfer_factor", c.output_xfer_factor},
       {"microcode_costs", c.microcode_costs}};
}

void from_json(const nlohmann::json& j, CostCalibration& c) {
  reject_unknown(j,
                 {"cycles_per_mac_8bit", "cycles_reduction_conv", "move_cycles_per_bit",
                  "sense_amp_cycling_speedup", "mac_setup_cycles", "dram_filter_bytes_per_cycle",
                  "dram_bound_fraction", "dram_stream_bytes_per_cycle", "input_stream_factor", "output_xfer_factor",
                  "microcode_costs"},
                 "calibration");
  read_field(j, "cycles_per_mac_8bit", c.cycles_per_mac_8bit);
  read_field(j, "cycles_reduction_conv", c.cycles_reduction_conv);
  read_field(j, "move_cycles_per_bit", c.move_cycles_per_bit);
  read_field(j, "sense_amp_cycling_speedup", c.sense_amp_cycling_speedup);
  read_field(j, "mac_setup_cycles", c.mac_setup_cycles);
  read_field(j, "dram_filter_bytes_per_cycle", c.dram_filter_bytes_per_cycle);
  read_field(j, "dram_bound_fraction", c.dram_bound_fraction);
  read_field(j, "dram_stream_bytes_per_cycle", c.dram_stream_bytes_per_cycle);
  read_field(j, "input_stream_factor", c.input_stream_factor);
  read_field(j, "output_xfer_factor", c.output_xfer_factor);
  read_field(j, "microcode_costs", c.microcode_costs);
}

GeometryConfig load_geometry(const std::string& path) {
  GeometryConfig cfg = read_json_file(path).get<GeometryConfig>();
  cfg.validate();
  return cfg;
}

CostCalibration load_calibration(const std::string& path) {
  CostCalibration cal = read_json_file(path).get<CostCalibration>();
  cal.validate();
  return cal;
}

}  // namespace bitcache
