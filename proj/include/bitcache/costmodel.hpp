#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bitcache/geometry.hpp"
#include "bitcache/mapper.hpp"

namespace bitcache {

struct NetworkDescriptor;

enum class Phase { FilterLoad, InputStream, OutputXfer, Mac, Reduction, Quantization, Pooling, Other };
enum class Domain { Compute, Access };

inline constexpr std::array<Phase, 8> kAllPhases = {
    Phase::FilterLoad, Phase::InputStream,  Phase::OutputXfer, Phase::Mac,
    Phase::Reduction,  Phase::Quantization, Phase::Pooling,    Phase::Other};

const char* to_string(Phase p) noexcept;
const char* to_string(Domain d) noexcept;
/// Movement phases run on the access clock, everything else on the compute clock.
Domain default_domain(Phase p) noexcept;

/// Cycles of one phase in one clock domain. Energy is cycles x active arrays x
/// the per-cycle energy of the domain; movement phases count one bus endpoint
/// per slice as their active arrays.
struct PhaseReport {
  Phase phase = Phase::Other;
  double cycles = 0.0;
  std::uint64_t active_arrays = 0;
  Domain domain = Domain::Compute;
  double energy_pj = 0.0;
};

PhaseReport make_phase(Phase phase, double cycles, std::uint64_t active_arrays,
                       const GeometryConfig& cfg, Domain domain);
PhaseReport make_phase(Phase phase, double cycles, std::uint64_t active_arrays,
                       const GeometryConfig& cfg);

/// cycles / clock frequency of the phase's domain.
double phase_time(const PhaseReport& p, const GeometryConfig& cfg);

struct LayerReport {
  std::string name;
  std::string group;
  LayerKind kind = LayerKind::Conv;
  std::uint64_t serial_iterations = 0;
  std::uint64_t arrays_active = 0;
  double utilization = 0.0;
  std::vector<PhaseReport> phases;

  double seconds(const GeometryConfig& cfg) const;
  double energy_pj() const;
  /// Sum of the phase's cycles over both clock domains.
  double cycles(Phase p) const;
};

struct RunReport {
  std::string network;
  std::uint32_t batch_size = 1;
  std::uint32_t slices = 0;
  std::vector<LayerReport> per_layer;
  double total_latency_s = 0.0;
  double total_energy_j = 0.0;
  double avg_power_w = 0.0;
  double throughput_inferences_per_s = 0.0;
  std::map<Phase, double> phase_cycles;
  std::map<Phase, double> phase_seconds;
  std::map<Phase, double> phase_energy_j;
  std::map<Phase, double> breakdown_fractions;

  double fraction(Phase p) const;
};

/// Totals, per-phase breakdown and throughput = batch / latency. Layers run
/// one after another, so latency is the plain sum of phase times.
RunReport aggregate(std::vector<LayerReport> layers, std::uint32_t batch_size,
                    const GeometryConfig& cfg, std::string network = {});

void to_json(nlohmann::json& j, const PhaseReport& p);
void to_json(nlohmann::json& j, const LayerReport& l);
void to_json(nlohmann::json& j, const RunReport& r);

/// phase,cycles,seconds,joules,fraction
std::string breakdown_csv(const RunReport& r);
/// Writes report.json and breakdown.csv into dir (created if missing).
void write_report(const RunReport& r, const std::string& dir);

/// Analytic latency of the network on the same geometry with `slices` slices.
double scale_geometry(const NetworkDescriptor& net, const GeometryConfig& cfg,
                      const CostCalibration& cal, std::uint32_t slices);

struct MovementTargets {
  double total_latency_s = 4.72e-3;
  double filter_share = 0.46;
  double input_share = 0.15;
  double output_share = 0.04;
};

/// Solves the DRAM filter bandwidth and the input and output transfer factors
/// so that a batch-1 analytic run hits the target latency with its movement
/// time split in the target proportions. Compute constants are left alone.
CostCalibration calibrate_movement(const NetworkDescriptor& net, const GeometryConfig& cfg,
                                   CostCalibration cal, const MovementTargets& targets = {});

}  // namespace bitcache
