// bitcache: command-line front end for the in-cache CNN simulator.
//
// Exit codes: 0 ok, 1 verification mismatch, 2 usage, 3 invalid model or
// configuration, 4 I/O failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bitcache/costmodel.hpp"
#include "bitcache/engine.hpp"
#include "bitcache/error.hpp"
#include "bitcache/geometry.hpp"
#include "bitcache/mapper.hpp"
#include "bitcache/model_io.hpp"

namespace fs = std::filesystem;
using namespace bitcache;

namespace {

enum Exit { kOk = 0, kMismatch = 1, kUsage = 2, kInvalid = 3, kIo = 4 };

struct Common {
  std::string model = "inception_v3";
  std::string geometry;
  std::string calibration;
  std::uint32_t slices = 0;
  std::uint32_t threads = 0;
  std::string out = "out";
};

NetworkDescriptor resolve_model(const std::string& m) {
  if (m == "inception_v3") return inception_v3();
  if (m == "toy") return toy_network();
  return load_descriptor(m);
}

GeometryConfig resolve_geometry(const Common& c) {
  GeometryConfig g = c.geometry.empty() ? GeometryConfig{} : load_geometry(c.geometry);
  if (c.slices) g = with_slices(g, c.slices);
  g.validate();
  return g;
}

// "microcode" selects cycle counts derived from the in-array microcode.
CostCalibration resolve_calibration(const Common& c) {
  if (c.calibration.empty()) return {};
  if (c.calibration == "microcode") return CostCalibration::microcode_derived();
  return load_calibration(c.calibration);
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f || !(f << text)) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

nlohmann::json plan_json(const NetworkDescriptor& net, const GeometryConfig& cfg, const std::string& only) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& s : net.layers) {
    if (!only.empty() && s.layer.name != only) continue;
    const auto plan = plan_layer(s.layer, cfg);
    layers.push_back({{"layer", s.layer}, {"plan", plan}, {"regions", allocate_regions(plan, cfg)}});
  }
  if (!only.empty() && layers.empty()) throw Error(ErrorCode::Schema, "no layer named " + only);
  return {{"network", net.name}, {"geometry", cfg}, {"layers", layers}};
}

void print_summary(const RunReport& r) {
  std::printf("%s  batch %u  slices %u\n", r.network.c_str(), r.batch_size, r.slices);
  std::printf("  latency     %.4f ms\n", r.total_latency_s * 1e3);
  std::printf("  throughput  %.1f inferences/s\n", r.throughput_inferences_per_s);
  std::printf("  energy      %.4f J  (avg %.1f W)\n", r.total_energy_j, r.avg_power_w);
  for (Phase p : kAllPhases)
    std::printf("  %-13s %8.4f ms  %5.1f%%\n", to_string(p), r.phase_seconds.at(p) * 1e3,
                100.0 * r.fraction(p));
}

int simulate(const Common& c, const std::string& mode, std::uint32_t batch, const std::string& input,
             bool verify, bool dump_plan, const std::vector<std::uint32_t>& sweep) {
  const auto net = resolve_model(c.model);
  const auto cfg = resolve_geometry(c);
  const auto cal = resolve_calibration(c);
  const bool functional = mode == "functional" || verify;
  ExecutionMode em{functional ? Fidelity::Functional : Fidelity::Analytic, batch, c.threads};

  std::vector<Tensor> inputs;
  if (functional && !net.layers.empty()) {
    if (!input.empty())
      inputs.push_back(to_activation(read_tensor(input)));
    else if (net.input_path.empty())
      inputs.push_back(random_input(net.in_h, net.in_w, net.in_c, 1));
  }
  const RunResult res = Engine(cfg, cal, em).run(net, inputs);
  write_report(res.report, c.out);
  if (dump_plan) write_file(fs::path(c.out) / "plan.json", plan_json(net, cfg, "").dump(2) + "\n");
  print_summary(res.report);

  if (!sweep.empty()) {
    std::string csv = "batch,latency_s,throughput_inferences_per_s,energy_j\n";
    for (auto n : sweep) {
      const auto r = Engine(cfg, cal, {Fidelity::Analytic, n, c.threads}).run(net).report;
      csv += std::to_string(n) + "," + std::to_string(r.total_latency_s) + "," +
             std::to_string(r.throughput_inferences_per_s) + "," + std::to_string(r.total_energy_j) + "\n";
      std::printf("  batch %4u  %10.1f inferences/s\n", n, r.throughput_inferences_per_s);
    }
    write_file(fs::path(c.out) / "batch_sweep.csv", csv);
  }

  if (!verify || net.layers.empty()) return kOk;
  const Tensor image = inputs.empty() ? to_activation(read_tensor(net.input_path)) : inputs.front();
  const auto ref = reference_inference(net, image);
  bool ok = true;
  for (const auto& s : net.layers) {
    const auto d = compare_outputs(ref.at(s.layer.name), res.activations[0].at(s.layer.name));
    if (!d.match) {
      std::printf("FAIL %s: %zu mismatches, first at (%u,%u,%u) expected %d got %d\n",
                  s.layer.name.c_str(), d.mismatches, d.y, d.x, d.c, d.expected, d.actual);
      ok = false;
    }
  }
  std::printf("%s functional run vs reference oracle\n", ok ? "PASS" : "FAIL");
  return ok ? kOk : kMismatch;
}

int pretranspose(const std::string& in, const std::string& out) {
  TensorFile t = read_tensor(in);
  t.layout = TensorLayout::Transposed;
  write_tensor(out, t);
  std::printf("wrote %s (%zu bytes, bit planes)\n", out.c_str(), t.data.size());
  return kOk;
}

int calibrate(const Common& c, const MovementTargets& t) {
  const auto net = resolve_model(c.model);
  const auto cal = calibrate_movement(net, resolve_geometry(c), resolve_calibration(c), t);
  const auto text = nlohmann::json(cal).dump(2) + "\n";
  write_file(fs::path(c.out) / "calibration.json", text);
  std::cout << text;
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--model", c.model, "inception_v3, toy, or a descriptor JSON path");
  app->add_option("--geometry", c.geometry, "geometry JSON");
  app->add_option("--calibration", c.calibration, "calibration JSON, or \"microcode\"");
  app->add_option("--slices", c.slices, "override the slice count");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  app->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-serial in-cache CNN simulator"};
  app.require_subcommand(1);
  Common c;

  auto* sim = app.add_subcommand("simulate", "run a network and write report.json and breakdown.csv");
  add_common(sim, c);
  std::string mode = "analytic", input;
  std::uint32_t batch = 1;
  bool verify = false, dump_plan = false;
  std::vector<std::uint32_t> sweep;
  sim->add_option("--mode", mode, "analytic or functional")->check(CLI::IsMember({"analytic", "functional"}));
  sim->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
  sim->add_option("--input", input, "input tensor for functional runs");
  sim->add_flag("--verify", verify, "functional run checked against the reference oracle");
  sim->add_flag("--dump-plan", dump_plan, "also write plan.json");
  sim->add_option("--sweep-batch", sweep, "comma-separated batch sizes for batch_sweep.csv")->delimiter(',');

  auto* plan = app.add_subcommand("plan", "print the layout plan of every layer, or of one");
  add_common(plan, c);
  std::string layer;
  plan->add_option("--layer", layer, "layer name");

  auto* pre = app.add_subcommand("pretranspose", "rewrite a tensor file in bit-plane layout");
  std::string pre_in, pre_out;
  pre->add_option("input", pre_in)->required();
  pre->add_option("output", pre_out)->required();

  auto* cal = app.add_subcommand("calibrate", "fit the movement parameters to a latency breakdown");
  add_common(cal, c);
  MovementTargets targets;
  cal->add_option("--latency", targets.total_latency_s, "target latency in seconds");
  cal->add_option("--filter-share", targets.filter_share);
  cal->add_option("--input-share", targets.input_share);
  cal->add_option("--output-share", targets.output_share);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*sim) return simulate(c, mode, batch, input, verify, dump_plan, sweep);
    if (*plan) {
      const auto j = plan_json(resolve_model(c.model), resolve_geometry(c), layer);
      std::cout << j.dump(2) << "\n";
      return kOk;
    }
    if (*pre) return pretranspose(pre_in, pre_out);
    if (*cal) return calibrate(c, targets);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kIo : kInvalid;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kUsage;
}
