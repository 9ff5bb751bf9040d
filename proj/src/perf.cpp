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

#include "wse/perf.hpp"

#include "wse/collectives.hpp"

namespace wse {

OpsPerPoint ops_per_point(OpGroup g, Precision m) {
  const bool half = m == Precision::Half || m == Precision::Mixed;
  OpsPerPoint o;
  switch (g) {
    case OpGroup::Matvec:
      (half ? o.hp_add : o.sp_add) = 12;
      (half ? o.hp_mul : o.sp_mul) = 12;
      break;
    case OpGroup::Dot:
      (half ? o.hp_mul : o.sp_mul) = 4;
      o.sp_add = 4;
      break;
    case OpGroup::Axpy:
      (half ? o.hp_add : o.sp_add) = 6;
      (half ? o.hp_mul : o.sp_mul) = 6;
      break;
  }
  return o;
}

OpsPerPoint ops_per_point(Precision m) {
  OpsPerPoint t;
  for (OpGroup g : {OpGroup::Matvec, OpGroup::Dot, OpGroup::Axpy}) {
    const OpsPerPoint o = ops_per_point(g, m);
    t.sp_add += o.sp_add;
    t.sp_mul += o.sp_mul;
    t.hp_add += o.hp_add;
    t.hp_mul += o.hp_mul;
  }
  return t;
}

std::uint64_t flops_per_iteration(const Dims& d) { return kFlopsPerPoint * d.points(); }

double predict_spmv_cycles(std::uint32_t z, Precision m) {
  const double adds = 6.0 / RateTable::lanes(OpClass::Add, m);
  const double muls = 6.0 / RateTable::lanes(OpClass::Mul, m);
  return (adds + muls) * z;
}

IterationEstimate estimate_iteration_time(const Dims& d, Precision m, ClockConfig clock, int width, int height,
                                          int rounds) {
  clock.validate();
  if (!d.valid() || width < 1 || height < 1) throw std::invalid_argument("estimate_iteration_time: bad dims");
  const MemoryReport mem = memory_footprint(d.z);
  if (!mem.feasible) throw InfeasibleProblem("Z = " + std::to_string(d.z) + " exceeds tile memory: " + mem.str());
  IterationEstimate e;
  const auto z = static_cast<std::uint32_t>(d.z);
  e.matvec_cycles = 2.0 * predict_spmv_cycles(z, m);
  e.local_cycles = 10.0 * z / RateTable::lanes(OpClass::Fmac, m);
  e.reduce_cycles = static_cast<double>(rounds) * static_cast<double>(predict_allreduce_cycles(width, height));
  e.seconds = e.cycles() / clock.hz;
  return e;
}

double fit_clock(const Dims& d, Precision m, double seconds, int rounds) {
  if (!(seconds > 0.0)) throw std::invalid_argument("fit_clock: target time must be positive");
  return estimate_iteration_time(d, m, ClockConfig{1.0}, d.x, d.y, rounds).cycles() / seconds;
}

RateInterval estimate_simple_rate(const Dims& d, int simple_iters, ClockConfig clock, const SimpleCostTable& t) {
  clock.validate();
  if (simple_iters < 1) throw std::invalid_argument("estimate_simple_rate: simple_iters must be positive");
  const double z = static_cast<double>(d.z);
  const int solver_iters = t.momentum_equations * t.transport_solver_iters + t.continuity_solver_iters;
  const double solve = solver_iters > 0 ? solver_iters * estimate_iteration_time(d, Precision::Mixed, clock).cycles() : 0.0;
  const auto step_cycles = [&](double init, double mom, double cont, double upd) {
    const double per_iter = (t.momentum_equations * mom + cont + upd) * z + solve;
    return init * z + simple_iters * per_iter;
  };
  const double fast = step_cycles(t.initialization.lo, t.momentum.lo, t.continuity.lo, t.field_update.lo);
  const double slow = step_cycles(t.initialization.hi, t.momentum.hi, t.continuity.hi, t.field_update.hi);
  return {clock.hz / slow, clock.hz / fast};
}

}  // namespace wse
