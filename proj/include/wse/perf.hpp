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

/**
 * @file perf.hpp
 * @brief Analytical cost models: flop accounting, per-iteration cycles and
 *        time, and the SIMPLE timestep-rate estimate.
 *
 * The iteration model charges, per mesh column of length Z:
 *   - 24 matvec ops (12 adds, 12 multiplies) at the add and multiply lane
 *     rates of the mode,
 *   - 20 dot/AXPY ops as 10 FMACs at the FMAC lane rate,
 *   - one ceil(1.1 D) latency per reduction round, not overlapped.
 */
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "wse/problem.hpp"
#include "wse/rates.hpp"
#include "wse/scalar.hpp"

namespace wse {

/// Useful operations per meshpoint per iteration, split by width.
struct OpsPerPoint {
  int sp_add = 0;
  int sp_mul = 0;
  int hp_add = 0;
  int hp_mul = 0;
  int total() const { return sp_add + sp_mul + hp_add + hp_mul; }
};

enum class OpGroup : std::uint8_t { Matvec, Dot, Axpy };

/// Two matvecs, four dots, six AXPYs. Half and Mixed share the fp16 rows;
/// dot adds are single precision in both.
OpsPerPoint ops_per_point(OpGroup g, Precision m);
OpsPerPoint ops_per_point(Precision m);

inline constexpr int kFlopsPerPoint = 44;
std::uint64_t flops_per_iteration(const Dims& d);

struct ClockConfig {
  double hz = 1e9;
  void validate() const {
    if (!(hz > 0.0)) throw std::invalid_argument("clock frequency must be positive");
  }
};

/// Reduction rounds per iteration: four, or three with the fused round.
inline constexpr int kReduceRounds = 4;
inline constexpr int kReduceRoundsFused = 3;

struct IterationEstimate {
  double matvec_cycles = 0.0;
  double local_cycles = 0.0;  // dots and AXPYs
  double reduce_cycles = 0.0;
  double cycles() const { return matvec_cycles + local_cycles + reduce_cycles; }
  double seconds = 0.0;
};

/// Throws InfeasibleProblem when Z does not fit tile memory.
IterationEstimate estimate_iteration_time(const Dims& d, Precision m, ClockConfig clock, int width, int height,
                                          int rounds = kReduceRounds);
inline IterationEstimate estimate_iteration_time(const Dims& d, Precision m, ClockConfig clock) {
  return estimate_iteration_time(d, m, clock, d.x, d.y);
}

/// Model cycles of one 7-point SpMV on a column of length z.
double predict_spmv_cycles(std::uint32_t z, Precision m);

/// Clock at which the model's iteration time equals `seconds`.
double fit_clock(const Dims& d, Precision m, double seconds, int rounds = kReduceRounds);

struct CycleRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Cycles per meshpoint outside the solver, inclusive ranges.
struct SimpleCostTable {
  CycleRange initialization{45, 64};  // once per timestep
  CycleRange momentum{79, 213};       // per equation, three per SIMPLE iteration
  CycleRange continuity{37, 81};
  CycleRange field_update{4, 6};
  int momentum_equations = 3;
  int transport_solver_iters = 5;
  int continuity_solver_iters = 20;
};

struct RateInterval {
  double lo = 0.0;  // timesteps per second
  double hi = 0.0;
  bool overlaps(double a, double b) const { return lo <= b && a <= hi; }
};

/// Timesteps per second for `simple_iters` SIMPLE iterations per step,
/// solves in Mixed precision. The slow end takes the upper table bounds.
RateInterval estimate_simple_rate(const Dims& d, int simple_iters, ClockConfig clock, const SimpleCostTable& t = {});

}  // namespace wse
