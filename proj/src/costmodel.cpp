#include "bitcache/costmodel.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bitcache/engine.hpp"
#include "bitcache/error.hpp"
#include "bitcache/model_io.hpp"

namespace bitcache {

const char* to_string(Phase p) noexcept {
  switch (p) {
    case Phase::FilterLoad: return "filter_load";
    case Phase::InputStream: return "input_stream";
    case Phase::OutputXfer: return "output_xfer";
    case Phase::Mac: return "mac";
    case Phase::Reduction: return "reduction";
    case Phase::Quantization: return "quantization";
    case Phase::Pooling: return "pooling";
    case Phase::Other: return "other";
  }
  return "?";
}

const char* to_string(Domain d) noexcept { return d == Domain::Compute ? "compute" : "access"; }

Domain default_domain(Phase p) noexcept {
  switch (p) {
    case Phase::FilterLoad:
    case Phase::InputStream:
    case Phase::OutputXfer: return Domain::Access;
    default: return Domain::Compute;
  }
}

PhaseReport make_phase(Phase phase, double cycles, std::uint64_t active_arrays,
                       const GeometryConfig& cfg, Domain domain) {
  const double pj = domain == Domain::Compute ? cfg.energy_compute_pj : cfg.energy_access_pj;
  return {phase, cycles, active_arrays, domain, cycles * static_cast<double>(active_arrays) * pj};
}

PhaseReport make_phase(Phase phase, double cycles, std::uint64_t active_arrays,
                       const GeometryConfig& cfg) {
  return make_phase(phase, cycles, active_arrays, cfg, default_domain(phase));
}

double phase_time(const PhaseReport& p, const GeometryConfig& cfg) {
  return p.cycles / (p.domain == Domain::Compute ? cfg.compute_freq_hz : cfg.access_freq_hz);
}

double LayerReport::seconds(const GeometryConfig& cfg) const {
  double s = 0.0;
  for (const auto& p : phases) s += phase_time(p, cfg);
  return s;
}

double LayerReport::energy_pj() const {
  double e = 0.0;
  for (const auto& p : phases) e += p.energy_pj;
  return e;
}

double LayerReport::cycles(Phase ph) const {
  double c = 0.0;
  for (const auto& p : phases)
    if (p.phase == ph) c += p.cycles;
  return c;
}

double RunReport::fraction(Phase p) const {
  auto it = breakdown_fractions.find(p);
  return it == breakdown_fractions.end() ? 0.0 : it->second;
}

RunReport aggregate(std::vector<LayerReport> layers, std::uint32_t batch_size,
                    const GeometryConfig& cfg, std::string network) {
  RunReport r;
  r.network = std::move(network);
  r.batch_size = batch_size;
  r.slices = cfg.num_slices;
  r.per_layer = std::move(layers);
  for (Phase p : kAllPhases) {
    r.phase_cycles[p] = 0.0;
    r.phase_seconds[p] = 0.0;
    r.phase_energy_j[p] = 0.0;
  }
  for (const auto& l : r.per_layer)
    for (const auto& p : l.phases) {
      r.phase_cycles[p.phase] += p.cycles;
      r.phase_seconds[p.phase] += phase_time(p, cfg);
      r.phase_energy_j[p.phase] += p.energy_pj * 1e-12;
    }
  for (Phase p : kAllPhases) {
    r.total_latency_s += r.phase_seconds[p];
    r.total_energy_j += r.phase_energy_j[p];
  }
  for (Phase p : kAllPhases)
    r.breakdown_fractions[p] = r.total_latency_s > 0 ? r.phase_seconds[p] / r.total_latency_s : 0.0;
  if (r.total_latency_s > 0) {
    r.avg_power_w = r.total_energy_j / r.total_latency_s;
    r.throughput_inferences_per_s = batch_size / r.total_latency_s;
  }
  return r;
}

void to_json(nlohmann::json& j, const PhaseReport& p) {
  j = {{"phase", to_string(p.phase)},
       {"cycles", p.cycles},
       {"active_arrays", p.active_arrays},
       {"domain", to_string(p.domain)},
       {"energy_pj", p.energy_pj}};
}

void to_json(nlohmann::json& j, const LayerReport& l) {
  j = {{"name", l.name},
       {"group", l.group},
       {"kind", to_string(l.kind)},
       {"serial_iterations", l.serial_iterations},
       {"arrays_active", l.arrays_active},
       {"utilization", l.utilization},
       {"phases", l.phases}};
}

void to_json(nlohmann::json& j, const RunReport& r) {
  nlohmann::json phases = nlohmann::json::object();
  for (Phase p : kAllPhases)
    phases[to_string(p)] = {{"cycles", r.phase_cycles.at(p)},
                            {"seconds", r.phase_seconds.at(p)},
                            {"joules", r.phase_energy_j.at(p)},
                            {"fraction", r.breakdown_fractions.at(p)}};
  j = {{"network", r.network},
       {"batch_size", r.batch_size},
       {"slices", r.slices},
       {"total_latency_s", r.total_latency_s},
       {"total_energy_j", r.total_energy_j},
       {"avg_power_w", r.avg_power_w},
       {"throughput_inferences_per_s", r.throughput_inferences_per_s},
       {"phases", phases},
       {"layers", r.per_layer}};
}

std::string breakdown_csv(const RunReport& r) {
  std::ostringstream os;
  os << std::setprecision(10) << "phase,cycles,seconds,joules,fraction\n";
  for (Phase p : kAllPhases)
    os << to_string(p) << ',' << r.phase_cycles.at(p) << ',' << r.phase_seconds.at(p) << ','
       << r.phase_energy_j.at(p) << ',' << r.breakdown_fractions.at(p) << '\n';
  return os.str();
}

void write_report(const RunReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream j(fs::path(dir) / "report.json");
  std::ofstream c(fs::path(dir) / "breakdown.csv");
  if (!j || !c) throw Error(ErrorCode::Io, "cannot write reports into " + dir);
  j << nlohmann::json(r).dump(2) << "\n";
  c << breakdown_csv(r);
}

double scale_geometry(const NetworkDescriptor& net, const GeometryConfig& cfg,
                      const CostCalibration& cal, std::uint32_t slices) {
  if (slices == 0) throw Error(ErrorCode::InvalidConfig, "slice count must be at least 1");
  Engine engine(with_slices(cfg, slices), cal, {});
  return engine.run(net).report.total_latency_s;
}

CostCalibration calibrate_movement(const NetworkDescriptor& net, const GeometryConfig& cfg,
                                   CostCalibration cal, const MovementTargets& t) {
  auto run = [&](const CostCalibration& c) { return Engine(cfg, c, {}).run(net).report; };
  cal.dram_filter_bytes_per_cycle = 1.0;
  cal.input_stream_factor = 1.0;
  cal.output_xfer_factor = 1.0;
  const RunReport base = run(cal);

  double fixed = 0.0;
  for (Phase p : kAllPhases)
    if (default_domain(p) == Domain::Compute) fixed += base.phase_seconds.at(p);
  const double movement = t.total_latency_s - fixed;
  const double shares = t.filter_share + t.input_share + t.output_share;
  if (movement <= 0 || shares <= 0)
    throw Error(ErrorCode::InvalidConfig, "compute time alone exceeds the calibration target");

  // Filter time is inversely proportional to the DRAM bandwidth.
  const double filter_target = movement * t.filter_share / shares;
  cal.dram_filter_bytes_per_cycle = base.phase_seconds.at(Phase::FilterLoad) / filter_target;

  // Input and output times are affine in their factors: k * bus + fixed part.
  const RunReport one = run(cal);
  CostCalibration twice = cal;
  twice.input_stream_factor = 2.0;
  twice.output_xfer_factor = 2.0;
  const RunReport two = run(twice);
  auto solve = [&](Phase p, double target) {
    const double slope = two.phase_seconds.at(p) - one.phase_seconds.at(p);
    const double intercept = one.phase_seconds.at(p) - slope;
    if (slope <= 0 || target <= intercept)
      throw Error(ErrorCode::InvalidConfig, std::string("cannot calibrate ") + to_string(p));
    return (target - intercept) / slope;
  };
  cal.input_stream_factor = solve(Phase::InputStream, movement * t.input_share / shares);
  cal.output_xfer_factor = solve(Phase::OutputXfer, movement * t.output_share / shares);
  cal.validate();
  return cal;
}

}  // namespace bitcache
