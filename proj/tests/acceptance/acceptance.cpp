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

// Acceptance checks, one line per criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wse/channels.hpp"
#include "wse/cli.hpp"
#include "wse/collectives.hpp"
#include "wse/kernels.hpp"
#include "wse/perf.hpp"
#include "wse/problem.hpp"
#include "wse/solver.hpp"

using namespace wse;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr Precision kModes[] = {Precision::Half, Precision::Mixed, Precision::Single, Precision::OracleDouble};
const Dims kFull{600, 595, 1536};

double rel(double got, double want) { return std::fabs(got - want) / std::max(std::fabs(want), 1e-300); }

std::vector<double> random_vector(std::size_t n, Format f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = round_to(f, d(rng));
  return v;
}

Outcome flops_consistency() {
  const std::uint64_t flops = flops_per_iteration(kFull);
  const std::uint64_t want = 44ull * 600 * 595 * 1536;
  const double pflops = static_cast<double>(flops) / 28.1e-6 / 1e15;
  const bool ok = flops == want && std::fabs(pflops - 0.859) < 0.0005 && rel(pflops, 0.86) <= 0.005;
  return {ok, fmt("flops/iter=%llu pflops=%.4f (0.86 within %.2f%%)", static_cast<unsigned long long>(flops), pflops,
                  100 * rel(pflops, 0.86))};
}

Outcome memory_accounting() {
  std::ostringstream out, err;
  const int code = cli::run({"mem-check", "--nz", "1536"}, out, err);
  const bool line = out.str().find("30720 bytes / 49152 (feasible)") != std::string::npos;
  const long long zmax = max_feasible_z();
  const bool ok = code == 0 && line && std::llabs(zmax - 2457) <= 1 && memory_footprint(zmax).feasible &&
                  !memory_footprint(zmax + 1).feasible;
  return {ok, fmt("mem-check Z=1536: %s; max feasible Z=%lld", line ? "30720 bytes" : "unexpected output", zmax)};
}

Outcome oracle_equivalence() {
  const Dims d{8, 8, 16};
  double worst = 0.0;
  int short_runs = 0;
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const StencilSystem sys = make_poisson_like(d, CoefficientSampler::dominant(), seed);
    const ReferenceOrder order{d, spmv3d_term_order(sys, Precision::OracleDouble)};
    const ReferenceResult ref =
        reference_bicgstab(to_dense(sys), sys.rhs, std::vector<double>(d.points(), 0.0), 20, 0.0, &order);
    SolverOptions o;
    o.mode = Precision::OracleDouble;
    o.max_iters = 20;
    o.tol = 1e-300;
    const SolveResult r = bicgstab_solve(sys, o);
    if (r.records.size() != 20 || ref.scalars.size() != 20) ++short_runs;
    const std::size_t n = std::min(r.records.size(), ref.scalars.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = r.records[i].scalars;
      const auto& b = ref.scalars[i];
      worst = std::max({worst, rel(a.alpha, b.alpha), rel(a.omega, b.omega)});
      if (i + 1 < n) worst = std::max(worst, rel(a.beta, b.beta));
    }
  }
  return {worst <= 1e-12 && short_runs == 0,
          fmt("25 seeds x 20 iterations, worst relative scalar difference %.3g, runs shorter than 20: %d", worst,
              short_runs)};
}

std::vector<double> run_spmv(const StencilSystem& sys, const std::vector<double>& v, Precision m, Schedule s) {
  DistributedSystem ds(sys);
  ds.fabric().set_schedule(s);
  const Format f = storage_format(m);
  const MemoryTensor vt = ds.allocate_vector(f, "v");
  const MemoryTensor ut = ds.allocate_vector(f, "u");
  ds.load(vt, v);
  spmv3d(ds, vt, ut, m);
  return ds.gather(ut);
}

/// Dense-oracle rows summed in the recorded term order under the mode's
/// arithmetic: products at product width, each partial sum at the
/// accumulation width and then stored at the storage width.
std::vector<double> replay(const StencilSystem& sys, const DenseMatrix& a, const std::vector<double>& v, Precision m,
                           const std::vector<std::vector<std::int8_t>>& order) {
  const Dims& d = sys.dims;
  std::vector<double> u(d.points());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double acc = 0.0;
    bool first = true;
    for (std::int8_t tag : order[i]) {
      double term = 0.0;
      if (tag == kDiagonalTerm) {
        term = a(i, i) * v[i];
      } else {
        const auto j = static_cast<std::ptrdiff_t>(i) + coupling_offset(d, tag);
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(a.n)) {
          const auto k = static_cast<int>(i % static_cast<std::size_t>(d.z));
          const bool off = (tag == kZm && k == 0) || (tag == kZp && k == d.z - 1);
          if (!off) term = round_to(product_format(m), a(i, static_cast<std::size_t>(j)) * v[static_cast<std::size_t>(j)]);
        }
      }
      acc = first ? round_to(storage_format(m), term)
                  : round_to(storage_format(m), round_to(accumulate_format(m), acc + term));
      first = false;
    }
    u[i] = acc;
  }
  return u;
}

Outcome spmv_exactness() {
  const Dims d{4, 4, 8};
  int mismatched = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const StencilSystem sys = make_poisson_like(d, CoefficientSampler::dominant(), seed);
    const DenseMatrix a = to_dense(sys);
    for (Precision m : kModes) {
      const auto v = random_vector(d.points(), storage_format(m), seed * 7 + 1);
      const auto u = run_spmv(sys, v, m, Schedule::deterministic());
      const auto want = replay(sys, a, v, m, spmv3d_term_order(sys, m));
      for (std::size_t i = 0; i < u.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(u[i]) != std::bit_cast<std::uint64_t>(want[i])) {
          ++mismatched;
          break;
        }
      }
    }
  }

  const StencilSystem sys = make_poisson_like(d, CoefficientSampler::dominant(), 99);
  const DenseMatrix a = to_dense(sys);
  double worst = 0.0, worst_double = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    for (Precision m : kModes) {
      const auto v = random_vector(d.points(), storage_format(m), 1000 + seed);
      const auto u = run_spmv(sys, v, m, Schedule::seeded(seed));
      const double eps = unit_roundoff(storage_format(m));
      for (std::size_t i = 0; i < a.n; ++i) {
        double exact = 0.0, mag = 0.0;
        for (std::size_t j = 0; j < a.n; ++j) {
          exact += a(i, j) * v[j];
          mag += std::fabs(a(i, j) * v[j]);
        }
        if (mag > 0.0) worst = std::max(worst, std::fabs(u[i] - exact) / (7 * eps * mag));
        // relative to the term magnitudes, so cancelling rows do not blow up the ratio
        if (m == Precision::OracleDouble && mag > 0.0) worst_double = std::max(worst_double, std::fabs(u[i] - exact) / mag);
      }
    }
  }
  const bool ok = mismatched == 0 && worst <= 1.0 && worst_double <= 1e-14;
  return {ok, fmt("replay mismatches %d/80; 100 seeded schedules: worst error / (7 eps sum|terms|) = %.3f, fp64 "
                  "worst error / sum|terms| %.2g",
                  mismatched, worst, worst_double)};
}

Outcome mixed_plateau() {
  const Dims d{20, 40, 20};
  int single_ok = 0, mixed_ok = 0;
  double lo = 1.0, hi = 0.0, worst_ratio = 0.0;
  std::string bad;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const StencilSystem sys = make_poisson_like(d, CoefficientSampler::convection_diffusion(0.6, 0.2), seed);
    SolverOptions o;
    o.max_iters = 60;
    o.tol = 1e-5;
    o.mode = Precision::Single;
    const SolveResult s = bicgstab_solve(sys, o);
    double best = 1.0;
    for (const auto& r : s.records) best = std::min(best, r.residual);
    if (best <= 1e-5) ++single_ok;

    o.mode = Precision::Mixed;
    const SolveResult m = bicgstab_solve(sys, o);
    // the last finite record, in case fp16 overflow ended the run
    std::vector<double> res;
    for (const auto& r : m.records) {
      if (std::isfinite(r.residual)) res.push_back(r.residual);
    }
    bool ok = res.size() > 20;
    if (ok) {
      const double last = res.back();
      const double ratio = res[res.size() - 21] / last;
      lo = std::min(lo, last);
      hi = std::max(hi, last);
      worst_ratio = std::max(worst_ratio, ratio);
      ok = last >= 1e-3 && last <= 1e-1 && ratio < 2.0;
    }
    if (ok) {
      ++mixed_ok;
    } else {
      bad += fmt(" seed%llu", static_cast<unsigned long long>(seed));
    }
  }
  return {single_ok == 10 && mixed_ok == 10,
          fmt("single reached 1e-5 on %d/10; mixed stagnated on %d/10, final residual in [%.2g, %.2g], worst "
              "20-iteration improvement %.2fx%s%s",
              single_ok, mixed_ok, lo, hi, worst_ratio, bad.empty() ? "" : ", failing:", bad.c_str())};
}

Outcome allreduce_latency() {
  const int sizes[] = {2, 4, 8, 16, 32};
  double worst = 0.0;
  int bad = 0;
  for (int w : sizes) {
    for (int h : sizes) {
      FabricConfig c;
      c.width = w;
      c.height = h;
      Fabric f = build_fabric(c);
      const auto n = static_cast<std::size_t>(w * h);
      std::vector<double> locals = random_vector(n, Format::Binary32, static_cast<std::uint64_t>(w * 100 + h));
      const AllReduceResult r = allreduce_sum(f, build_reduce_route(w, h), locals);
      const auto dia = static_cast<double>(diameter(w, h));
      const double ratio = static_cast<double>(r.cycles) / dia;
      worst = std::max(worst, ratio);
      bool same = true;
      for (const auto& v : r.values) same = same && std::bit_cast<std::uint64_t>(v[0]) == std::bit_cast<std::uint64_t>(r.values[0][0]);
      if (!same || ratio < 1.0 || ratio > 1.25) ++bad;
    }
  }
  return {bad == 0, fmt("25 grids, worst cycles/diameter %.3f, failing grids %d", worst, bad)};
}

Outcome channel_tessellation() {
  int bad = 0;
  for (int w = 1; w <= 64; ++w) {
    for (int h = 1; h <= 64; ++h) {
      FabricConfig c;
      c.width = w;
      c.height = h;
      Fabric f = build_fabric(c);
      assign_channels(f);
      if (!validate_channels(f).empty()) ++bad;
    }
  }
  return {bad == 0, fmt("4096 grids checked, %d with violations", bad)};
}

Outcome simple_estimator() {
  const double f = fit_clock(kFull, Precision::Mixed, 28.1e-6);
  const RateInterval r = estimate_simple_rate({600, 600, 600}, 15, {f});
  return {r.overlaps(80.0, 125.0), fmt("f*=%.2f MHz, rate [%.1f, %.1f] timesteps/s", f / 1e6, r.lo, r.hi)};
}

Outcome resource_invariants() {
  const StencilSystem sys = make_poisson_like({8, 8, 32}, CoefficientSampler::dominant(), 3);
  int peak_threads = 0;
  std::size_t peak_mem = 0;
  std::string failure;
  for (Precision m : kModes) {
    SolverOptions o;
    o.mode = m;
    o.max_iters = 30;
    o.tol = 1e-5;
    o.checked = true;
    try {
      const SolveResult r = bicgstab_solve(sys, o);
      peak_threads = std::max(peak_threads, r.peak_threads);
      peak_mem = std::max(peak_mem, r.peak_memory);
    } catch (const std::exception& e) {
      failure = std::string(to_string(m)) + ": " + e.what();
    }
  }
  const bool ok = failure.empty() && peak_threads <= 9 && peak_mem <= 49152;
  return {ok, fmt("checked solves in 4 modes, peak threads %d, peak memory %zu bytes%s%s", peak_threads, peak_mem,
                  failure.empty() ? "" : ", ", failure.c_str())};
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path();
  std::string csv[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path p = dir / ("wse_acceptance_" + std::to_string(k) + ".csv");
    std::ostringstream out, err;
    cli::run({"solve", "--dims", "8x8x16", "--mode", "mixed", "--max-iters", "40", "--tol", "1e-4", "--schedule",
              "deterministic", "--csv", p.string()},
             out, err);
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    csv[k] = ss.str();
    fs::remove(p);
  }
  const bool ok = !csv[0].empty() && csv[0] == csv[1];
  return {ok, fmt("two runs, %zu bytes each, %s", csv[0].size(), csv[0] == csv[1] ? "identical" : "different")};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"flops consistency", flops_consistency},
      {"memory accounting", memory_accounting},
      {"oracle equivalence", oracle_equivalence},
      {"spmv bit-exactness", spmv_exactness},
      {"mixed-precision plateau", mixed_plateau},
      {"allreduce latency", allreduce_latency},
      {"channel tessellation", channel_tessellation},
      {"simple estimator", simple_estimator},
      {"resource invariants", resource_invariants},
      {"determinism", determinism},
  };
  int failed = 0, index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::printf("%-4s criterion %2d %-24s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", index - failed, index);
  return failed;
}
