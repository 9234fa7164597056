// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--expect-fail N,...]
// Exit status is 1 when a criterion fails that is not listed as expected.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bitcache/bitarray.hpp"
#include "bitcache/costmodel.hpp"
#include "bitcache/engine.hpp"
#include "bitcache/mapper.hpp"
#include "bitcache/model_io.hpp"

using namespace bitcache;
using U64s = std::vector<std::uint64_t>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

enum class Op { Add, Sub, Mul, Div, Max };

struct OpRun {
  U64s result;
  std::uint64_t cycles = 0;
};

OpRun run_op(Op op, std::uint32_t n, const U64s& a, const U64s& b) {
  const LaneRange lanes{0, static_cast<std::uint32_t>(a.size())};
  BitArray arr(256, 256);
  const OperandRegion ra{0, n, lanes}, rb{n, n, lanes};
  const std::uint32_t out = 2 * n;
  arr.store(ra, a);
  arr.store(rb, b);
  OpRun r;
  switch (op) {
    case Op::Add: {
      const OperandRegion d{out, n + 1, lanes};
      arr.add(ra, rb, d);
      r.result = arr.load(d);
      break;
    }
    case Op::Sub: {
      const OperandRegion d{out, n + 1, lanes};
      arr.subtract(ra, rb, d);
      r.result = arr.load(d);
      break;
    }
    case Op::Mul: {
      const OperandRegion d{out, 2 * n, lanes};
      arr.multiply(ra, rb, d);
      r.result = arr.load(d);
      break;
    }
    case Op::Div: {
      const OperandRegion q{out, n, lanes}, s{out + n, 3 * n + 2, lanes};
      arr.divide(ra, rb, q, s);
      r.result = arr.load(q);
      break;
    }
    case Op::Max: {
      arr.elementwise_max(ra, rb, {out, n + 1, lanes});
      r.result = arr.load(ra);
      break;
    }
  }
  r.cycles = arr.cycle_count();
  return r;
}

std::uint64_t expected(Op op, std::uint32_t n, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t mask = (1ULL << n) - 1;
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return (a - b) & ((mask << 1) | 1);
    case Op::Mul: return a * b;
    case Op::Div: return b == 0 ? mask : a / b;
    case Op::Max: return std::max(a, b);
  }
  return 0;
}

constexpr Op kOps[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Max};

// Returns the number of mismatching lanes.
std::size_t check_lanes(Op op, std::uint32_t n, const U64s& a, const U64s& b) {
  const auto r = run_op(op, n, a, b);
  std::size_t bad = 0;
  for (std::size_t j = 0; j < a.size(); ++j) bad += r.result[j] != expected(op, n, a[j], b[j]);
  return bad;
}

Outcome arithmetic() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t bad = 0, checked = 0;
  for (std::uint32_t n : {2u, 3u, 4u}) {
    U64s a, b;
    for (std::uint64_t x = 0; x < (1u << n); ++x)
      for (std::uint64_t y = 0; y < (1u << n); ++y) {
        a.push_back(x);
        b.push_back(y);
      }
    for (Op op : kOps) {
      bad += check_lanes(op, n, a, b);
      checked += a.size();
    }
  }
  std::mt19937_64 rng(2024);
  std::size_t random_pairs = 0;
  while (random_pairs < 100000) {
    U64s a(256), b(256);
    for (auto& v : a) v = rng() & 0xFF;
    for (auto& v : b) v = rng() & 0xFF;
    for (Op op : kOps) bad += check_lanes(op, 8, a, b);
    random_pairs += a.size();
    checked += 5 * a.size();
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << checked << " lane results, " << random_pairs << " random 8-bit pairs, " << bad
     << " mismatches, " << s << " s";
  return {bad == 0 && s < 60.0, os.str()};
}

Outcome cycle_formulas() {
  std::ostringstream os;
  bool ok = true;
  for (std::uint32_t n : {2u, 4u, 8u, 16u}) {
    const U64s a(4, 3), b(4, 1);
    const double nn = n;
    const auto add = run_op(Op::Add, n, a, b).cycles;
    const auto mul = run_op(Op::Mul, n, a, b).cycles;
    const auto div = run_op(Op::Div, n, a, b).cycles;
    const bool good = add == n + 1 && static_cast<double>(mul) == nn * nn + 5 * nn - 2 &&
                      static_cast<double>(div) == 1.5 * nn * nn + 5.5 * nn;
    ok = ok && good;
    os << "n=" << n << " add " << add << " mul " << mul << " div " << div << (good ? "" : " (wrong)") << "; ";
  }
  return {ok, os.str()};
}

Outcome mapping() {
  const GeometryConfig cfg;
  const auto lanes = total_compute_lanes(cfg);
  const auto fig8 = plan_layer(make_conv("fig8", 32, 128, 3, 3, 32), cfg);
  const auto b2 = plan_layer(make_conv("Conv2D_2b_3x3", 147, 32, 3, 3, 64), cfg);
  const auto per_slice = fig8.parallel_convs / cfg.num_slices;
  const bool ok = lanes == 1146880 && fig8.filters_per_array == 2 && per_slice == 18 * 32 &&
                  b2.parallel_convs == 32256 && b2.serial_iterations == 43 &&
                  std::abs(b2.utilization - 0.997) <= 0.001;
  std::ostringstream os;
  os << "lanes " << lanes << ", fig8 " << fig8.filters_per_array << " filters/array " << per_slice
     << " convs/slice, Conv2D_2b " << b2.parallel_convs << " parallel " << b2.serial_iterations
     << " serial " << b2.utilization * 100 << "% utilization";
  return {ok, os.str()};
}

Outcome layer_time() {
  const GeometryConfig cfg;
  const CostCalibration cal;
  const auto plan = plan_layer(make_conv("Conv2D_2b_3x3", 147, 32, 3, 3, 64), cfg);
  const double cycles = conv_mac_cycles(plan, cal) + conv_reduction_cycles(plan, cfg, cal);
  const double ms = cycles / cfg.compute_freq_hz * 1e3;
  const double err = std::abs(ms - 0.0479) / 0.0479;
  std::ostringstream os;
  os << "conv phase " << static_cast<std::uint64_t>(cycles) << " cycles (target 117912; 43 x 2784 = 119712), "
     << ms << " ms vs 0.0479 ms (" << err * 100 << "% off)";
  return {cycles == 117912.0 && err <= 0.02, os.str()};
}

const NetworkDescriptor& inception() {
  static const NetworkDescriptor net = inception_v3();
  return net;
}

Outcome capacity_scaling() {
  const auto net = inception();
  const double t14 = scale_geometry(net, {}, {}, 14);
  const double t18 = scale_geometry(net, {}, {}, 18);
  const double t24 = scale_geometry(net, {}, {}, 24);
  const double e18 = std::abs(t18 - 4.12e-3) / 4.12e-3, e24 = std::abs(t24 - 3.79e-3) / 3.79e-3;
  std::ostringstream os;
  os << "14/18/24 slices: " << t14 * 1e3 << " / " << t18 * 1e3 << " / " << t24 * 1e3 << " ms; errors "
     << e18 * 100 << "% and " << e24 * 100 << "% vs 4.12 / 3.79 ms";
  return {t14 > t18 && t18 > t24 && e18 <= 0.10 && e24 <= 0.10, os.str()};
}

Outcome breakdown() {
  const auto r = Engine({}, {}, {}).run(inception()).report;
  const std::pair<Phase, double> targets[] = {{Phase::FilterLoad, 0.46}, {Phase::InputStream, 0.15},
                                              {Phase::OutputXfer, 0.04}, {Phase::Mac, 0.20},
                                              {Phase::Reduction, 0.10}, {Phase::Quantization, 0.05}};
  bool ok = true;
  std::ostringstream os;
  for (const auto& [p, want] : targets) {
    const double got = r.fraction(p);
    ok = ok && std::abs(got - want) <= 0.03;
    os << to_string(p) << " " << got * 100 << "% ";
  }
  double sum = 0;
  for (Phase p : kAllPhases) sum += r.fraction(p);
  os << "(sum " << sum * 100 << "%)";
  return {ok && std::abs(sum - 1.0) < 1e-9, os.str()};
}

Outcome batching() {
  std::vector<double> thr;
  double load1 = 0, load8 = 0;
  for (std::uint32_t n = 1; n <= 16; ++n) {
    const auto r = Engine({}, {}, {Fidelity::Analytic, n}).run(inception()).report;
    thr.push_back(r.throughput_inferences_per_s);
    if (n == 1) load1 = r.phase_cycles.at(Phase::FilterLoad);
    if (n == 8) load8 = r.phase_cycles.at(Phase::FilterLoad);
  }
  bool rising = true;
  for (std::size_t i = 1; i < thr.size(); ++i) rising = rising && thr[i] > thr[i - 1];
  const double t64 = Engine({}, {}, {Fidelity::Analytic, 64}).run(inception()).report.throughput_inferences_per_s;
  const double t128 = Engine({}, {}, {Fidelity::Analytic, 128}).run(inception()).report.throughput_inferences_per_s;
  const double change = std::abs(t128 - t64) / t64;
  std::ostringstream os;
  os << "N=1 " << thr.front() << "/s, N=16 " << thr.back() << "/s, N=64 " << t64 << "/s, N=128 " << t128
     << "/s (" << change * 100 << "% change); filter load N=1 " << load1 << " vs N=8 " << load8 << " cycles";
  return {rising && change < 0.05 && load1 == load8, os.str()};
}

Outcome functional_toy() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto toy = toy_network(1);
  int convs = 0, fcs = 0, maxpools = 0, avgpools = 0;
  std::uint32_t widest = 0;
  for (const auto& s : toy.layers) {
    convs += s.layer.kind == LayerKind::Conv;
    fcs += s.layer.kind == LayerKind::FC;
    maxpools += s.layer.kind == LayerKind::MaxPool;
    avgpools += s.layer.kind == LayerKind::AvgPool;
    widest = std::max({widest, s.layer.C, s.layer.M});
  }
  const bool shape = convs == 2 && fcs == 1 && maxpools == 1 && avgpools == 1 && widest <= 8 &&
                     toy.in_h <= 16 && toy.in_w <= 16;
  std::size_t bad = 0, elements = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto in = random_input(toy.in_h, toy.in_w, toy.in_c, seed);
    const auto ref = reference_inference(toy, in);
    const auto got = Engine({}, {}, {Fidelity::Functional}).run(toy, {in});
    for (const auto& s : toy.layers) {
      const auto d = compare_outputs(ref.at(s.layer.name), got.activations[0].at(s.layer.name));
      bad += d.mismatches;
      elements += ref.at(s.layer.name).data.size();
    }
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream os;
  os << "toy net (" << convs << " conv, " << maxpools << " maxpool, " << avgpools << " avgpool, " << fcs
     << " fc, <= " << widest << " channels), 3 inputs, " << elements << " outputs, " << bad
     << " mismatches, " << s << " s";
  return {shape && bad == 0 && s < 300.0, os.str()};
}

Outcome energy() {
  const auto r = Engine({}, {}, {}).run(inception()).report;
  std::ostringstream os;
  os << r.total_energy_j << " J per inference";
  return {r.total_energy_j >= 0.05 && r.total_energy_j <= 1.0, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expect_fail;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--expect-fail") == 0) {
      std::stringstream ss(argv[i + 1]);
      for (std::string tok; std::getline(ss, tok, ',');) expect_fail.insert(std::stoi(tok));
    }

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"arithmetic oracle equivalence", arithmetic},
      {"cycle formulas", cycle_formulas},
      {"mapping golden numbers", mapping},
      {"layer compute time", layer_time},
      {"capacity scaling", capacity_scaling},
      {"breakdown shape", breakdown},
      {"batching behavior", batching},
      {"end-to-end functional correctness", functional_toy},
      {"energy sanity", energy},
  };
  int unexpected = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    const int id = static_cast<int>(i) + 1;
    const Outcome o = criteria[i].second();
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    if (!o.pass && !expect_fail.count(id)) ++unexpected;
    if (!o.pass && expect_fail.count(id)) std::printf("     (known failure, listed with --expect-fail)\n");
  }
  std::fflush(stdout);
  return unexpected ? 1 : 0;
}
