/*
 * Copyright 2026 The wse-stencil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "wse/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "wse/collectives.hpp"
#include "wse/kernels.hpp"
#include "wse/perf.hpp"
#include "wse/problem.hpp"
#include "wse/run_config.hpp"
#include "wse/solver.hpp"

namespace wse::cli {

namespace {

struct Failure {
  int code;
  std::string kind;
  std::string message;
};

[[noreturn]] void fail(int code, std::string kind, std::string message) {
  throw Failure{code, std::move(kind), std::move(message)};
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

/// Output target: a named file, or `fallback` when the path is empty or "-".
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) fail(kExitUsage, "io", "cannot write '" + path + "'");
      os_ = file_.get();
    }
  }
  std::ostream& get() { return *os_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* os_;
};

Dims checked_dims(const RunConfig& c) {
  const auto d = parse_dims(c.dims);
  if (!d) fail(kExitUsage, "usage", "dims must look like 8x8x16, got '" + c.dims + "'");
  if (!d->valid()) fail(kExitInfeasible, "infeasible", "dims " + c.dims + " have an empty axis");
  return *d;
}

CoefficientSampler sampler_for(SamplerChoice s) {
  switch (s) {
    case SamplerChoice::Dominant: return CoefficientSampler::dominant(0.9);
    case SamplerChoice::ConvectionDiffusion: return CoefficientSampler::convection_diffusion(0.6, 0.2);
    case SamplerChoice::Zero: return CoefficientSampler::zero();
  }
  return {};
}

StencilSystem load_system(const RunConfig& c) {
  if (!c.input.empty()) {
    std::ifstream in(c.input, std::ios::binary);
    if (!in) fail(kExitUsage, "io", "cannot read '" + c.input + "'");
    try {
      return read_system(in);
    } catch (const std::exception& e) {
      fail(kExitUsage, "format", e.what());
    }
  }
  const Dims d = checked_dims(c);
  const MemoryReport mem = memory_footprint(d.z);
  if (!mem.feasible) fail(kExitInfeasible, "infeasible", "Z = " + std::to_string(d.z) + ": " + mem.str());
  return make_poisson_like(d, sampler_for(c.sampler), c.problem_seed);
}

// -- subcommands --------------------------------------------------------------

int cmd_solve(const RunConfig& c, std::ostream& out) {
  const StencilSystem sys = load_system(c);
  if (!memory_footprint(sys.dims.z).feasible) fail(kExitInfeasible, "infeasible", "system does not fit tile memory");
  SolverOptions o;
  o.mode = c.mode;
  o.max_iters = c.max_iters;
  o.tol = c.tol;
  o.schedule = c.schedule;
  o.fused_reduce = c.fused_reduce;
  o.policy = c.parallel ? ExecPolicy::Parallel : ExecPolicy::Serial;
  const SolveResult r = bicgstab_solve(sys, o);

  const bool csv_to_out = c.csv.empty() || c.csv == "-";
  {
    Sink csv(c.csv, out);
    write_residual_csv(csv.get(), r.records, c.mode);
  }
  if (!csv_to_out) {
    char buf[256];
    const double res = r.records.empty() ? 1.0 : r.records.back().residual;
    std::snprintf(buf, sizeof buf, "status=%s iterations=%d residual=%.6e cycles=%llu reductions=%d\n",
                  std::string(to_string(r.status)).c_str(), r.stop_iter, res,
                  static_cast<unsigned long long>(r.cycles), r.reductions);
    out << buf;
  }
  if (r.status == SolveStatus::Breakdown || r.status == SolveStatus::Diverged) {
    fail(kExitBreakdown, std::string(to_string(r.status)), r.message);
  }
  return kExitOk;
}

int cmd_spmv_check(const RunConfig& c, std::ostream& out) {
  const StencilSystem sys = load_system(c);
  const Dims& d = sys.dims;
  const Format vf = storage_format(c.mode);
  std::mt19937_64 rng(c.problem_seed + 1);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::vector<double> v(d.points());
  for (auto& e : v) e = round_to(vf, sym(rng));

  DistributedSystem ds(sys);
  ds.fabric().set_schedule(c.schedule);
  Sink trace(c.trace, out);
  if (!c.trace.empty()) {
    trace.get() << kTraceColumns << '\n';
    ds.fabric().set_trace(&trace.get());
  }
  const MemoryTensor vt = ds.allocate_vector(vf, "v");
  const MemoryTensor ut = ds.allocate_vector(vf, "u");
  ds.load(vt, v);
  const KernelStats st = spmv3d(ds, vt, ut, c.mode);
  ds.fabric().set_trace(nullptr);
  const std::vector<double> u = ds.gather(ut);

  std::vector<double> exact;
  std::string oracle = "stencil";
  if (d.points() <= c.oracle_cap) {
    const DenseMatrix a = to_dense(sys, c.oracle_cap);
    exact.assign(d.points(), 0.0);
    for (std::size_t i = 0; i < a.n; ++i) {
      for (std::size_t j = 0; j < a.n; ++j) exact[i] += a(i, j) * v[j];
    }
    oracle = "dense";
  } else {
    exact = apply_stencil(sys, v);
  }
  StencilSystem mag = sys;
  for (auto& col : mag.coeff) {
    for (auto& e : col) e = std::fabs(e);
  }
  std::vector<double> av(v.size());
  std::transform(v.begin(), v.end(), av.begin(), [](double e) { return std::fabs(e); });
  const std::vector<double> sum_abs = apply_stencil(mag, av);
  // every partial sum is rounded at both widths; one spare term covers second-order effects
  const double gamma = 8.0 * (unit_roundoff(vf) + unit_roundoff(accumulate_format(c.mode)));

  double worst = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double err = std::fabs(u[i] - exact[i]);
    const double bound = gamma * sum_abs[i];
    if (err > bound) ++bad;
    if (bound > 0) worst = std::max(worst, err / bound);
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "# dims=%s mode=%s cycles=%llu model=%.0f oracle=%s worst_error_over_bound=%.3f violations=%zu\n",
                d.str().c_str(), std::string(to_string(c.mode)).c_str(), static_cast<unsigned long long>(st.cycles),
                predict_spmv_cycles(static_cast<std::uint32_t>(d.z), c.mode), oracle.c_str(), worst, bad);
  out << buf;
  if (bad) fail(kExitCheckFailed, "check", std::to_string(bad) + " elements exceed the rounding bound");
  return kExitOk;
}

int cmd_allreduce_trace(const RunConfig& c, std::ostream& out) {
  const Dims d = checked_dims(c);
  FabricConfig cfg;
  cfg.width = d.x;
  cfg.height = d.y;
  Fabric f(cfg);
  f.set_schedule(c.schedule);
  const ReduceRoute route = build_reduce_route(d.x, d.y);
  install_allreduce_routes(f, route);
  const Format pf = c.mode == Precision::OracleDouble ? Format::Binary64 : Format::Binary32;
  std::mt19937_64 rng(c.problem_seed);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::vector<double> locals(f.tile_count());
  for (auto& e : locals) e = round_to(pf, sym(rng));

  Sink trace(c.trace.empty() ? "-" : c.trace, out);
  trace.get() << kTraceColumns << '\n';
  f.set_trace(&trace.get());
  const AllReduceResult r = allreduce_sum(f, route, locals, pf);
  f.set_trace(nullptr);
  const double expect = allreduce_reference(route, locals, pf);
  std::size_t mismatches = 0;
  for (const auto& v : r.values) {
    if (v.front() != expect) ++mismatches;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "# grid=%dx%d cycles=%llu diameter=%llu model=%llu sum=%.9g mismatches=%zu\n", d.x, d.y,
                static_cast<unsigned long long>(r.cycles), static_cast<unsigned long long>(diameter(d.x, d.y)),
                static_cast<unsigned long long>(predict_allreduce_cycles(d.x, d.y)), expect, mismatches);
  out << buf;
  if (mismatches) fail(kExitCheckFailed, "check", "tiles disagree on the reduced value");
  return kExitOk;
}

int cmd_perf(const RunConfig& c, std::ostream& out) {
  const Dims d = checked_dims(c);
  const int rounds = c.fused_reduce ? kReduceRoundsFused : kReduceRounds;
  double hz = c.clock_hz;
  try {
    if (c.fit_seconds > 0.0) hz = fit_clock(d, c.mode, c.fit_seconds, rounds);
    char buf[256];
    std::snprintf(buf, sizeof buf, "# dims=%s clock_hz=%.6g flops_per_iteration=%llu\n", d.str().c_str(), hz,
                  static_cast<unsigned long long>(flops_per_iteration(d)));
    out << buf;
    Sink table(c.table, out);
    std::ostream& t = table.get();
    if (!c.table.empty()) t << "# wse perf table v1\n";
    t << "mode,matvec_cycles,local_cycles,reduce_cycles,total_cycles,seconds,flops_per_second\n";
    for (Precision m : {Precision::Half, Precision::Mixed, Precision::Single, Precision::OracleDouble}) {
      const IterationEstimate e = estimate_iteration_time(d, m, ClockConfig{hz}, d.x, d.y, rounds);
      std::snprintf(buf, sizeof buf, "%s,%.0f,%.0f,%.0f,%.0f,%.6e,%.6e\n", std::string(to_string(m)).c_str(),
                    e.matvec_cycles, e.local_cycles, e.reduce_cycles, e.cycles(), e.seconds,
                    static_cast<double>(flops_per_iteration(d)) / e.seconds);
      t << buf;
    }
    if (c.simple_iters > 0) {
      const RateInterval r = estimate_simple_rate(d, c.simple_iters, ClockConfig{hz});
      std::snprintf(buf, sizeof buf, "# simple_iters=%d timesteps_per_second=[%.2f, %.2f]\n", c.simple_iters, r.lo, r.hi);
      out << buf;
    }
  } catch (const InfeasibleProblem& e) {
    fail(kExitInfeasible, "infeasible", e.what());
  } catch (const std::invalid_argument& e) {
    fail(kExitUsage, "usage", e.what());
  }
  return kExitOk;
}

int cmd_mem_check(const RunConfig& c, std::ostream& out) {
  const long long z = c.nz > 0 ? c.nz : checked_dims(c).z;
  const MemoryReport r = memory_footprint(z);
  out << r.str() << '\n';
  if (!r.feasible) fail(kExitInfeasible, "infeasible", "Z = " + std::to_string(z) + " exceeds tile memory");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wafer-scale fabric simulator for stencil BiCGStab", "wse"};
  app.require_subcommand(1);
  std::map<std::string, std::string> values;  // config key -> flag text
  std::string config_path;
  bool print_config = false;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");

  const std::vector<std::pair<std::string, std::string>> opts = {
      {"--dims", "dims"},           {"--mode", "mode"},          {"--max-iters", "max_iters"},
      {"--tol", "tol"},             {"--schedule", "schedule"},  {"--seed", "problem_seed"},
      {"--sampler", "sampler"},     {"--clock", "clock_hz"},     {"--input", "input"},
      {"--csv", "csv"},             {"--trace", "trace"},        {"--table", "table"},
      {"--oracle-cap", "oracle_cap"}, {"--nz", "nz"},            {"--simple-iters", "simple_iters"},
      {"--fit", "fit_seconds"}};
  std::vector<std::pair<std::string, CLI::Option*>> bound;
  std::vector<std::unique_ptr<std::string>> storage;
  for (const auto& [flag, key] : opts) {
    storage.push_back(std::make_unique<std::string>());
    bound.emplace_back(key, app.add_option(flag, *storage.back(), key));
  }
  bool fused = false, parallel = false;
  auto* fused_opt = app.add_flag("--fused", fused, "fuse the (q,y) and (y,y) reductions");
  auto* parallel_opt = app.add_flag("--parallel", parallel, "OpenMP tile loops");

  for (const char* name : {"solve", "spmv-check", "allreduce-trace", "perf", "mem-check"}) {
    app.add_subcommand(name)->fallthrough();
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: kind=usage message=" << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    cfg.oracle_cap = oracle_cap();
    if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
    for (std::size_t i = 0; i < bound.size(); ++i) {
      if (bound[i].second->count()) apply_setting(cfg, bound[i].first, *storage[i]);
    }
    if (fused_opt->count()) cfg.fused_reduce = fused;
    if (parallel_opt->count()) cfg.parallel = parallel;
    cfg.subcommand = app.get_subcommands().front()->get_name();

    if (print_config) {
      out << serialize(cfg);
      return kExitOk;
    }
    if (cfg.subcommand == "solve") return cmd_solve(cfg, out);
    if (cfg.subcommand == "spmv-check") return cmd_spmv_check(cfg, out);
    if (cfg.subcommand == "allreduce-trace") return cmd_allreduce_trace(cfg, out);
    if (cfg.subcommand == "perf") return cmd_perf(cfg, out);
    return cmd_mem_check(cfg, out);
  } catch (const Failure& f) {
    err << "error: kind=" << f.kind << " message=" << one_line(f.message) << '\n';
    return f.code;
  } catch (const ConfigError& e) {
    err << "error: kind=config message=" << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const InfeasibleProblem& e) {
    err << "error: kind=infeasible message=" << one_line(e.what()) << '\n';
    return kExitInfeasible;
  } catch (const SimulationError& e) {
    err << "error: kind=simulation message=" << one_line(e.what()) << '\n';
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "error: kind=internal message=" << one_line(e.what()) << '\n';
    return kExitUsage;
  }
}

}  // namespace wse::cli
