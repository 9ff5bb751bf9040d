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
 * @file solver.hpp
 * @brief Distributed BiCGStab on the fabric kernels, a dense fp64
 *        reference, and residual reporting.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wse/fabric.hpp"
#include "wse/kernels.hpp"
#include "wse/problem.hpp"

namespace wse {

/// Breakdown threshold theta. The tests are scale free:
///   |(r0,s)| <= theta |rho|, (y,y) <= theta |(q,y)|,
///   |rho| <= theta ||r0|| ||r||, |omega| < theta.
inline constexpr double kBreakdownThreshold = 1.0 / 16777216.0;  // 2^-24

/// True when `den` is negligible against `scale`; NaN counts as negligible.
inline bool negligible(double den, double scale) { return !(std::fabs(den) > kBreakdownThreshold * std::fabs(scale)); }

struct IterationScalars {
  double rho = 0.0;  // (r0, r_i)
  double alpha = 0.0;
  double omega = 0.0;
  double beta = 0.0;
};

struct ConvergenceRecord {
  int iter = 0;
  double residual = 0.0;    // true relative residual, fp64
  double recurrence = 0.0;  // sqrt((r+, r+)) / ||b|| from the reduction
  std::uint64_t cycles = 0;  // cumulative
  IterationScalars scalars;
};

enum class SolveStatus : std::uint8_t { Converged, MaxIterations, Breakdown, Diverged };
std::string_view to_string(SolveStatus s);

struct FlopCount {
  std::uint64_t matvec = 0;
  std::uint64_t dot = 0;
  std::uint64_t axpy = 0;
  std::uint64_t total() const { return matvec + dot + axpy; }
};

struct SolverOptions {
  Precision mode = Precision::Mixed;
  int max_iters = 100;
  double tol = 1e-6;
  Schedule schedule;
  /// One reduction round for (q,y) and (y,y) instead of two.
  bool fused_reduce = false;
  /// Assert resource invariants after every simulated cycle.
  bool checked = false;
  ExecPolicy policy = ExecPolicy::Serial;
  FabricConfig fabric;
  Spmv3DOptions spmv;
};

struct SolveResult {
  std::vector<double> x;
  std::vector<ConvergenceRecord> records;
  SolveStatus status = SolveStatus::MaxIterations;
  int stop_iter = 0;
  std::string message;
  FlopCount flops;
  std::uint64_t cycles = 0;
  std::uint64_t spmv_cycles = 0;
  std::uint64_t reduce_cycles = 0;
  std::uint64_t local_cycles = 0;
  int reductions = 0;
  int peak_threads = 0;
  std::size_t peak_memory = 0;
};

/// Algorithm: s = A p; alpha = (r0,r)/(r0,s); q = r - alpha s; y = A q;
/// omega = (q,y)/(y,y); x += alpha p + omega q; r+ = q - omega y;
/// beta = (alpha/omega) (r0,r+)/(r0,r); p+ = r+ + beta (p - omega s).
/// x0 = 0, r0 = b. Stops when both the reduced (r+,r+) estimate and the
/// true residual are at or below tol.
SolveResult bicgstab_solve(const StencilSystem& sys, const SolverOptions& opt);

struct ReferenceResult {
  std::vector<double> x;
  std::vector<IterationScalars> scalars;
  std::vector<double> residuals;  // ||b - A x|| / ||b|| after each iteration
  SolveStatus status = SolveStatus::MaxIterations;
  int stop_iter = 0;
};

/// Association order of the distributed solver, for bitwise-close replay.
/// Dots: per mesh column a sequential fused sum over z, then the
/// reduction tree's fixed order. AXPYs: one fused multiply-add.
/// Rows: terms in `matvec_terms[i]` order (see spmv3d_term_order), each
/// product rounded before it is added; empty means index order.
struct ReferenceOrder {
  Dims dims;
  std::vector<std::vector<std::int8_t>> matvec_terms;
};

/// Sequential fp64 BiCGStab. Without `order`, dot products and matrix rows
/// are summed in index order and AXPYs round twice. Stops early only on breakdown, divergence or a
/// residual below `tol`.
ReferenceResult reference_bicgstab(const DenseMatrix& a, const std::vector<double>& b, const std::vector<double>& x0,
                                   int iters, double tol = 0.0, const ReferenceOrder* order = nullptr);

/// ||b - A x||_2 / ||b||_2 at fp64.
double true_residual(const StencilSystem& sys, const std::vector<double>& x);

/// CSV with a versioned comment header: iter,residual,cycles,mode.
void write_residual_csv(std::ostream& out, const std::vector<ConvergenceRecord>& records, Precision mode);
inline constexpr const char* kResidualCsvHeader = "# wse residual history v1";

}  // namespace wse
