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
 * @file spmv2d.hpp
 * @brief 9-point 2D SpMV with an output-halo exchange.
 *
 * Each tile owns a bx x by block of the mesh and the matching columns of A.
 * Local products are accumulated into a ring one cell wider than the block;
 * the ring's edges are then sent to the four edge neighbors, first along x,
 * then along y. Corner products travel in the x round and are forwarded in
 * the y round, so nothing is sent along diagonals.
 */
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "wse/fabric.hpp"
#include "wse/problem.hpp"

namespace wse {

inline constexpr int kNinePoint = 9;
inline constexpr int kNineCenter = 4;
/// Offset index k = (dy + 1) * 3 + (dx + 1).
constexpr int nine_dx(int k) { return k % 3 - 1; }
constexpr int nine_dy(int k) { return k / 3 - 1; }

/// Halo-exchange channels, one per send direction.
inline constexpr Channel kHaloEast = 12;
inline constexpr Channel kHaloWest = 13;
inline constexpr Channel kHaloNorth = 14;
inline constexpr Channel kHaloSouth = 15;

struct NinePointSystem {
  int nx = 0;
  int ny = 0;
  /// coeff[k][i] = A(i, i + offset k); binary16 values; zero across the
  /// boundary. The center term is 1.
  std::array<std::vector<double>, kNinePoint> coeff;

  std::size_t points() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * nx + x; }
};

/// Random binary16 couplings in [-scale, scale].
NinePointSystem make_nine_point(int nx, int ny, std::uint64_t seed, double scale = 0.12);
/// y = A x in binary64, terms summed in offset order.
std::vector<double> apply_nine_point(const NinePointSystem& sys, const std::vector<double>& x);
DenseMatrix to_dense(const NinePointSystem& sys, std::size_t cap = oracle_cap());

struct HaloBlock2D {
  int bx = 8;
  int by = 8;
};

/// Words per tile: 9 matrix columns and 6 solver vectors per point, the
/// halo ring, and edge staging for the two exchange rounds.
std::size_t halo_block_words(HaloBlock2D b);
MemoryReport halo_block_memory(HaloBlock2D b, std::size_t budget = kDefaultTileMemory);
/// Largest square block that fits.
int max_square_halo_block(std::size_t budget = kDefaultTileMemory);

/// Interior-tile redundant work over credited work. Credited: 16 flops per
/// point (the unit diagonal multiply and the first add are not useful).
/// Redundant: the diagonal multiply, the add into a zero accumulator, and
/// one add per received halo word.
double halo_overhead(HaloBlock2D b);

struct Spmv2DOptions {
  FabricConfig base;
  Schedule schedule;
};

struct Spmv2DResult {
  std::vector<double> u;  // accumulation format of the mode
  std::uint64_t cycles = 0;
  std::uint64_t useful_flops = 0;
  std::uint64_t performed_flops = 0;
  std::uint64_t halo_words = 0;  // exchanged accumulator words
  int peak_threads = 0;
  double overhead() const {
    return useful_flops == 0 ? 0.0
                             : static_cast<double>(performed_flops - useful_flops) / static_cast<double>(useful_flops);
  }
};

/// u = A v on a (nx / bx) x (ny / by) fabric. Throws InfeasibleProblem when
/// the block does not fit tile memory and std::invalid_argument when the
/// block does not tile the mesh.
Spmv2DResult spmv2d(const NinePointSystem& sys, HaloBlock2D block, const std::vector<double>& v, Precision mode,
                    const Spmv2DOptions& opt = {});

}  // namespace wse
