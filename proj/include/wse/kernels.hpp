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
 * @file kernels.hpp
 * @brief Distributed data layout and the tile kernels: dataflow 7-point
 *        SpMV, AXPY and local dot products.
 */
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "wse/fabric.hpp"
#include "wse/problem.hpp"

namespace wse {

/// Fabric sized to a system with one tile per mesh column, channels
/// assigned and coefficients resident. Every tile uses the same addresses
/// so a MemoryTensor describes a distributed vector.
class DistributedSystem {
 public:
  explicit DistributedSystem(const StencilSystem& sys, FabricConfig base = {});

  Fabric& fabric() { return fabric_; }
  const Fabric& fabric() const { return fabric_; }
  const Dims& dims() const { return dims_; }
  /// Coefficient tensors, binary16, indexed by Coupling.
  const std::array<MemoryTensor, kCouplings>& coefficients() const { return coeff_; }

  /// Allocate a Z-vector on every tile, preceded by one zero element so that
  /// shifted(v) addresses v[k-1].
  MemoryTensor allocate_vector(Format f, std::string_view what);
  static MemoryTensor shifted(const MemoryTensor& v);

  /// Store a global vector, rounding to the tensor's format.
  void load(const MemoryTensor& t, const std::vector<double>& global);
  std::vector<double> gather(const MemoryTensor& t) const;

 private:
  Dims dims_;
  Fabric fabric_;
  std::array<MemoryTensor, kCouplings> coeff_{};
};

struct Spmv3DOptions {
  std::uint32_t fifo_capacity = 64;
  bool order_log = false;  // record per-element summation order
};

struct KernelStats {
  std::uint64_t cycles = 0;
  std::uint64_t flops = 0;  // credited flops
  int peak_threads = 0;
};

/// u = A v on the fabric. v and u are distributed vectors in
/// storage_format(mode). Terms reach u in this order: the z-1 product
/// initialises u, the remaining five products and the diagonal are added
/// as they arrive.
KernelStats spmv3d(DistributedSystem& ds, const MemoryTensor& v, const MemoryTensor& u, Precision mode,
                   const Spmv3DOptions& opt = {});

/// Per-row summation order of spmv3d on `sys` (Coupling tags, with
/// kDiagonalTerm for the diagonal), in global index order. Arrival timing
/// does not depend on vector values, so one run fixes the order of every
/// later run with the same shape, mode, options and schedule.
std::vector<std::vector<std::int8_t>> spmv3d_term_order(const StencilSystem& sys, Precision mode,
                                                        const Spmv3DOptions& opt = {},
                                                        Schedule schedule = Schedule::deterministic());

/// Credited flops of one SpMV: 12 per meshpoint.
inline constexpr int kSpmvFlopsPerPoint = 12;

// -- element-wise kernels ----------------------------------------------------

/// y + a x with a rounded to the operand width, one rounding at the
/// accumulation width and a final rounding to the storage width.
double axpy_element(double y, double a, double x, Precision mode);
void axpy(std::vector<double>& y, double a, const std::vector<double>& x, Precision mode);
/// Sequential sum of x_i y_i in index order with exact products.
double dot_local(const std::vector<double>& x, const std::vector<double>& y, Precision mode);
/// Precision used by dot products: Half dots accumulate like Mixed.
constexpr Precision dot_mode(Precision m) { return m == Precision::Half ? Precision::Mixed : m; }

/// Tile-resident variants over every tile of the fabric.
void axpy_tiles(Fabric& f, const MemoryTensor& y, double a, const MemoryTensor& x, Precision mode,
                ExecPolicy policy = ExecPolicy::Parallel);
/// y = x + a y.
void xpay_tiles(Fabric& f, const MemoryTensor& y, double a, const MemoryTensor& x, Precision mode,
                ExecPolicy policy = ExecPolicy::Parallel);
/// One partial dot product per tile, in tile order, at scalar_format(mode).
std::vector<double> dot_tiles(const Fabric& f, const MemoryTensor& x, const MemoryTensor& y, Precision mode,
                              ExecPolicy policy = ExecPolicy::Parallel);
/// dst = src element-wise with rounding to dst's format.
void copy_tiles(Fabric& f, const MemoryTensor& dst, const MemoryTensor& src);

/// Cycles for a Z-element AXPY or dot at the FMAC lane rate.
std::uint64_t axpy_cycles(std::uint32_t z, Precision mode);
std::uint64_t dot_cycles(std::uint32_t z, Precision mode);

}  // namespace wse
