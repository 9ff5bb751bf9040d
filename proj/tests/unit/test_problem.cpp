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

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "wse/problem.hpp"

using namespace wse;

TEST_CASE("parse_dims") {
  CHECK(parse_dims("8x8x16") == Dims{8, 8, 16});
  CHECK(parse_dims("600x595x1536") == Dims{600, 595, 1536});
  const auto zero = parse_dims("0x4x4");
  REQUIRE(zero.has_value());
  CHECK_FALSE(zero->valid());
  CHECK_FALSE(parse_dims("8x8").has_value());
  CHECK_FALSE(parse_dims("axbxc").has_value());
  CHECK_FALSE(parse_dims("").has_value());
  CHECK(Dims{3, 4, 5}.str() == "3x4x5");
}

TEST_CASE("make_poisson_like") {
  CHECK_THROWS_AS(make_poisson_like({0, 1, 1}, CoefficientSampler::dominant(), 1), std::invalid_argument);

  SUBCASE("single point") {
    const StencilSystem s = make_poisson_like({1, 1, 1}, CoefficientSampler::zero(), 1);
    const DenseMatrix a = to_dense(s);
    REQUIRE(a.n == 1);
    CHECK(a(0, 0) == 1.0);
    CHECK(apply_stencil(s, s.rhs) == s.rhs);
  }

  SUBCASE("dominant rows") {
    const StencilSystem s = make_poisson_like({8, 8, 16}, CoefficientSampler::dominant(), 3);
    std::string why;
    CHECK_MESSAGE(s.well_formed(&why), why);
    const Dims& d = s.dims;
    double worst = 0.0;
    for (std::size_t i = 0; i < d.points(); ++i) {
      double row = 0.0;
      for (int c = 0; c < kCouplings; ++c) row += std::fabs(s.coefficient(c, i));
      worst = std::max(worst, row);
    }
    CHECK(worst < 1.0);
    CHECK(s.max_offdiag_row_sum() == worst);
  }

  SUBCASE("coefficients and rhs are binary16 values") {
    const StencilSystem s = make_poisson_like({4, 3, 5}, CoefficientSampler::convection_diffusion(0.6, 0.2), 9);
    for (const auto& field : s.coeff) {
      for (double v : field) CHECK(representable(Format::Binary16, v));
    }
    for (double v : s.rhs) CHECK(representable(Format::Binary16, v));
  }

  SUBCASE("seeded generation is reproducible") {
    const auto a = make_poisson_like({4, 4, 4}, CoefficientSampler::dominant(), 5);
    const auto b = make_poisson_like({4, 4, 4}, CoefficientSampler::dominant(), 5);
    const auto c = make_poisson_like({4, 4, 4}, CoefficientSampler::dominant(), 6);
    CHECK(a.coeff == b.coeff);
    CHECK(a.rhs == b.rhs);
    CHECK(a.coeff != c.coeff);
  }
}

TEST_CASE("memory footprint") {
  CHECK(memory_footprint(1536).bytes == 30720);
  CHECK(memory_footprint(1536).str() == "30720 bytes / 49152 (feasible)");
  CHECK(memory_footprint(0).bytes == 0);
  CHECK(memory_footprint(2400).bytes == 48000);
  CHECK(memory_footprint(2400).feasible);
  CHECK_FALSE(memory_footprint(2500).feasible);
  CHECK(max_feasible_z() == 2457);
  CHECK(memory_footprint(2457).feasible);
  CHECK_FALSE(memory_footprint(2458).feasible);
  CHECK_THROWS_AS(memory_footprint(-1), std::invalid_argument);
}

TEST_CASE("to_dense") {
  SUBCASE("z band") {
    StencilSystem s = make_poisson_like({1, 1, 2}, CoefficientSampler::zero(), 1);
    s.coeff[kZp][0] = 0.25;
    s.coeff[kZm][1] = -0.5;
    const DenseMatrix a = to_dense(s);
    CHECK(a(0, 0) == 1.0);
    CHECK(a(1, 1) == 1.0);
    CHECK(a(0, 1) == 0.25);
    CHECK(a(1, 0) == -0.5);
  }

  SUBCASE("bands match neighbor enumeration") {
    const StencilSystem s = make_poisson_like({3, 2, 4}, CoefficientSampler::dominant(), 2);
    const Dims& d = s.dims;
    const DenseMatrix a = to_dense(s);
    for (int i = 0; i < d.x; ++i) {
      for (int j = 0; j < d.y; ++j) {
        for (int k = 0; k < d.z; ++k) {
          const std::size_t row = d.index(i, j, k);
          const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k}, {i, j + 1, k}, {i, j, k + 1}, {i, j, k - 1}};
          double expected_nonzero = 0.0;
          for (int c = 0; c < kCouplings; ++c) {
            const auto [ni, nj, nk] = nb[c];
            if (ni < 0 || nj < 0 || nk < 0 || ni >= d.x || nj >= d.y || nk >= d.z) {
              CHECK(s.coefficient(c, row) == 0.0);
              continue;
            }
            const std::size_t col = d.index(ni, nj, nk);
            CHECK(static_cast<std::ptrdiff_t>(col) - static_cast<std::ptrdiff_t>(row) == coupling_offset(d, c));
            CHECK(a(row, col) == s.coefficient(c, row));
            expected_nonzero += std::fabs(s.coefficient(c, row));
          }
          double off = 0.0;
          for (std::size_t col = 0; col < a.n; ++col) {
            if (col != row) off += std::fabs(a(row, col));
          }
          CHECK(off == doctest::Approx(expected_nonzero));
        }
      }
    }
    CHECK(coupling_offset(d, kXp) == d.y * d.z);
  }

  SUBCASE("identity") {
    const DenseMatrix a = to_dense(make_poisson_like({2, 2, 2}, CoefficientSampler::zero(), 1));
    for (std::size_t r = 0; r < a.n; ++r) {
      for (std::size_t c = 0; c < a.n; ++c) CHECK(a(r, c) == (r == c ? 1.0 : 0.0));
    }
  }

  SUBCASE("cap") {
    const StencilSystem s = make_poisson_like({4, 4, 4}, CoefficientSampler::zero(), 1);
    CHECK_THROWS_AS(to_dense(s, 63), std::length_error);
    CHECK_NOTHROW(to_dense(s, 64));
  }
}

TEST_CASE("system container round trip") {
  const StencilSystem s = make_poisson_like({3, 4, 5}, CoefficientSampler::convection_diffusion(0.6, 0.2), 4);
  for (Precision p : {Precision::Half, Precision::Mixed, Precision::Single, Precision::OracleDouble}) {
    std::stringstream io(std::ios::in | std::ios::out | std::ios::binary);
    write_system(io, s, p);
    Precision back = Precision::Half;
    const StencilSystem t = read_system(io, &back);
    CHECK(back == p);
    CHECK(t.dims == s.dims);
    CHECK(t.coeff == s.coeff);
    CHECK(t.rhs == s.rhs);
  }

  std::stringstream junk("definitely not a system");
  CHECK_THROWS_AS(read_system(junk), std::runtime_error);

  std::stringstream full(std::ios::in | std::ios::out | std::ios::binary);
  write_system(full, s, Precision::Mixed);
  std::string bytes = full.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream cut(bytes);
  CHECK_THROWS_AS(read_system(cut), std::runtime_error);
}

TEST_CASE("scatter and gather") {
  const Dims d{3, 2, 4};
  std::vector<double> g(d.points());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  const auto cols = scatter(d, g);
  REQUIRE(cols.size() == 6);
  CHECK(cols[column_index(d, 2, 1)][3] == g[d.index(2, 1, 3)]);
  CHECK(gather(d, cols) == g);
  CHECK_THROWS_AS(scatter(d, {1.0}), std::invalid_argument);
}
