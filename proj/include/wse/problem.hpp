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
 * @file problem.hpp
 * @brief 7-point stencil systems with a unit main diagonal, their mapping
 *        onto the tile grid, and the per-tile memory rule.
 *
 * Global ordering is lexicographic with x outermost and z innermost:
 * i = (x * Y + y) * Z + z. Tile (x, y) holds the z-column of mesh column
 * (x, y). Couplings that would reach outside the mesh are zero.
 */
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wse/scalar.hpp"

namespace wse {

struct Dims {
  int x = 1;
  int y = 1;
  int z = 1;

  std::size_t points() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(y) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(z) +
           static_cast<std::size_t>(k);
  }
  bool valid() const { return x >= 1 && y >= 1 && z >= 1; }
  std::string str() const;
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Parses "8x8x16". Zero or negative extents parse but are not valid().
std::optional<Dims> parse_dims(const std::string& s);

/// Off-diagonal coefficient fields. The numbering is also the tag of each
/// term in the SpMV summation-order log; the diagonal term is kDiagonal.
enum Coupling : int { kXm = 0, kXp = 1, kYm = 2, kYp = 3, kZp = 4, kZm = 5 };
inline constexpr int kCouplings = 6;
inline constexpr int kDiagonalTerm = 6;

/// Global-index offset of the neighbor reached through each coupling.
std::ptrdiff_t coupling_offset(const Dims& d, int coupling);

struct StencilSystem {
  Dims dims;
  /// Coefficients after Jacobi scaling, each exactly representable in
  /// binary16. Indexed by Coupling, then global index.
  std::array<std::vector<double>, kCouplings> coeff;
  /// Right-hand side, binary16-representable.
  std::vector<double> rhs;

  double coefficient(int coupling, std::size_t i) const { return coeff[static_cast<std::size_t>(coupling)][i]; }
  /// Largest row sum of off-diagonal magnitudes.
  double max_offdiag_row_sum() const;
  /// Checks boundary couplings are zero and all values finite binary16.
  bool well_formed(std::string* why = nullptr) const;
};

enum class SamplerKind : std::uint8_t {
  Zero,                 // identity matrix
  Dominant,             // random couplings with row sums of |a_ij| below the dominance bound
  ConvectionDiffusion,  // nonsymmetric: -Laplace + wind, randomly perturbed
};

struct CoefficientSampler {
  SamplerKind kind = SamplerKind::Dominant;
  double dominance = 0.9;  // Dominant: upper bound on the off-diagonal row sum
  double wind = 0.6;       // ConvectionDiffusion: cell Peclet number per axis
  double shift = 0.05;     // ConvectionDiffusion: reaction term added to the diagonal
  double jitter = 0.1;     // ConvectionDiffusion: relative random perturbation

  static CoefficientSampler zero() { return {SamplerKind::Zero}; }
  static CoefficientSampler dominant(double d = 0.9) {
    CoefficientSampler s;
    s.dominance = d;
    return s;
  }
  static CoefficientSampler convection_diffusion(double wind, double shift, double jitter = 0.1) {
    CoefficientSampler s;
    s.kind = SamplerKind::ConvectionDiffusion;
    s.wind = wind;
    s.shift = shift;
    s.jitter = jitter;
    return s;
  }
};

/// Generates a system, Jacobi-scales it to a unit diagonal and rounds the
/// couplings and right-hand side to binary16. Throws std::invalid_argument
/// for empty dims.
StencilSystem make_poisson_like(const Dims& dims, const CoefficientSampler& sampler, std::uint64_t seed);

/// y = A x in binary64, element terms summed in Coupling order after the
/// diagonal.
std::vector<double> apply_stencil(const StencilSystem& sys, const std::vector<double>& x);

inline constexpr std::size_t kDefaultTileMemory = 49152;

/// A problem that does not fit the fabric's memory or shape.
struct InfeasibleProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};
inline constexpr int kVectorsPerTile = 10;  // 6 couplings + 4 working vectors

struct MemoryReport {
  std::size_t bytes = 0;
  std::size_t budget = kDefaultTileMemory;
  bool feasible = true;
  std::ptrdiff_t headroom() const { return static_cast<std::ptrdiff_t>(budget) - static_cast<std::ptrdiff_t>(bytes); }
  std::string str() const;  // "30720 bytes / 49152 (feasible)"
};

/// 10 Z binary16 words per tile.
MemoryReport memory_footprint(long long z, std::size_t budget = kDefaultTileMemory);
/// Largest Z that passes memory_footprint.
long long max_feasible_z(std::size_t budget = kDefaultTileMemory);

/// Dense-matrix size limit for oracles; WSE_ORACLE_CAP overrides the default.
inline constexpr std::size_t kDefaultOracleCap = 4096;
std::size_t oracle_cap();

struct DenseMatrix {
  std::size_t n = 0;
  std::vector<double> a;  // row-major
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

/// Throws std::length_error when the point count exceeds the cap.
DenseMatrix to_dense(const StencilSystem& sys, std::size_t cap = oracle_cap());

/// Binary container; see README for the byte layout.
void write_system(std::ostream& out, const StencilSystem& sys, Precision precision);
StencilSystem read_system(std::istream& in, Precision* precision = nullptr);

/// Splits a global vector into per-column vectors, indexed y * X + x to
/// match the fabric's tile order.
std::vector<std::vector<double>> scatter(const Dims& d, const std::vector<double>& global);
std::vector<double> gather(const Dims& d, const std::vector<std::vector<double>>& columns);
inline std::size_t column_index(const Dims& d, int x, int y) {
  return static_cast<std::size_t>(y) * static_cast<std::size_t>(d.x) + static_cast<std::size_t>(x);
}

}  // namespace wse
