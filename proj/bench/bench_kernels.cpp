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

#include <benchmark/benchmark.h>

#include <random>

#include "wse/kernels.hpp"
#include "wse/solver.hpp"

using namespace wse;

namespace {

ExecPolicy policy_of(const benchmark::State& state) {
  return state.range(0) == 0 ? ExecPolicy::Serial : ExecPolicy::Parallel;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

std::vector<double> random_vector(std::size_t n, Format f) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = round_to(f, d(rng));
  return v;
}

void BM_Spmv3D(benchmark::State& state) {
  const StencilSystem sys = make_poisson_like({32, 32, 64}, CoefficientSampler::dominant(), 1);
  DistributedSystem ds(sys);
  ds.fabric().set_policy(policy_of(state));
  const MemoryTensor v = ds.allocate_vector(Format::Binary16, "v");
  const MemoryTensor u = ds.allocate_vector(Format::Binary16, "u");
  ds.load(v, random_vector(sys.dims.points(), Format::Binary16));
  std::uint64_t cycles = 0;
  for (auto _ : state) cycles += spmv3d(ds, v, u, Precision::Mixed).cycles;
  state.counters["sim_cycles_per_s"] = benchmark::Counter(static_cast<double>(cycles), benchmark::Counter::kIsRate);
  label(state);
}
BENCHMARK(BM_Spmv3D)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AxpyTiles(benchmark::State& state) {
  const StencilSystem sys = make_poisson_like({64, 64, 512}, CoefficientSampler::zero(), 1);
  DistributedSystem ds(sys);
  const MemoryTensor x = ds.allocate_vector(Format::Binary16, "x");
  const MemoryTensor y = ds.allocate_vector(Format::Binary16, "y");
  ds.load(x, random_vector(sys.dims.points(), Format::Binary16));
  for (auto _ : state) axpy_tiles(ds.fabric(), y, 0.5, x, Precision::Mixed, policy_of(state));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sys.dims.points()));
  label(state);
}
BENCHMARK(BM_AxpyTiles)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DotTiles(benchmark::State& state) {
  const StencilSystem sys = make_poisson_like({64, 64, 512}, CoefficientSampler::zero(), 1);
  DistributedSystem ds(sys);
  const MemoryTensor x = ds.allocate_vector(Format::Binary16, "x");
  ds.load(x, random_vector(sys.dims.points(), Format::Binary16));
  for (auto _ : state) benchmark::DoNotOptimize(dot_tiles(ds.fabric(), x, x, Precision::Mixed, policy_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(sys.dims.points()));
  label(state);
}
BENCHMARK(BM_DotTiles)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Solve(benchmark::State& state) {
  const StencilSystem sys = make_poisson_like({16, 16, 32}, CoefficientSampler::dominant(), 1);
  SolverOptions o;
  o.max_iters = 5;
  o.tol = 1e-30;
  o.policy = policy_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(bicgstab_solve(sys, o));
  label(state);
}
BENCHMARK(BM_Solve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
