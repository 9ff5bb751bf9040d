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

#include <bit>
#include <cmath>
#include <random>

#include "wse/kernels.hpp"
#include "wse/spmv2d.hpp"

using namespace wse;

namespace {

constexpr Precision kModes[] = {Precision::Half, Precision::Mixed, Precision::Single, Precision::OracleDouble};

std::vector<double> random_vector(std::size_t n, Format f, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = round_to(f, d(rng));
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

std::vector<double> run_spmv(const StencilSystem& sys, const std::vector<double>& v, Precision mode,
                             Schedule schedule = Schedule::deterministic()) {
  DistributedSystem ds(sys);
  ds.fabric().set_schedule(schedule);
  const Format f = storage_format(mode);
  const MemoryTensor vt = ds.allocate_vector(f, "v");
  const MemoryTensor ut = ds.allocate_vector(f, "u");
  ds.load(vt, v);
  spmv3d(ds, vt, ut, mode);
  return ds.gather(ut);
}

/// Replays the recorded term order: the first product is stored, every
/// later term is added at the accumulation width and stored again.
std::vector<double> replay_spmv(const StencilSystem& sys, const std::vector<double>& v, Precision mode,
                                const std::vector<std::vector<std::int8_t>>& order) {
  const Dims& d = sys.dims;
  const Format sf = storage_format(mode);
  const Format pf = product_format(mode);
  std::vector<double> u(d.points());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const auto k = static_cast<int>(i % static_cast<std::size_t>(d.z));
    bool first = true;
    double acc = 0.0;
    for (std::int8_t tag : order[i]) {
      double term;
      if (tag == kDiagonalTerm) {
        term = v[i];
      } else {
        const bool off_mesh = (tag == kZm && k == 0) || (tag == kZp && k == d.z - 1);
        const double x = off_mesh ? 0.0 : v[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + coupling_offset(d, tag))];
        term = round_to(pf, sys.coefficient(tag, i) * x);
      }
      if (first) {
        acc = round_to(sf, term);
        first = false;
      } else {
        acc = round_to(sf, round_to(accumulate_format(mode), acc + term));
      }
    }
    u[i] = acc;
  }
  return u;
}

}  // namespace

TEST_CASE("spmv3d with zero couplings copies v") {
  const StencilSystem sys = make_poisson_like({3, 2, 5}, CoefficientSampler::zero(), 1);
  for (Precision m : kModes) {
    const auto v = random_vector(sys.dims.points(), storage_format(m), 3);
    CHECK(bitwise_equal(run_spmv(sys, v, m), v));
  }
}

TEST_CASE("spmv3d of e0 is column 0 of A") {
  StencilSystem sys = make_poisson_like({1, 1, 4}, CoefficientSampler::zero(), 1);
  sys.coeff[kZp][0] = 0.375;
  sys.coeff[kZm][1] = -0.625;
  const std::vector<double> e0{1.0, 0.0, 0.0, 0.0};
  const DenseMatrix a = to_dense(sys);
  for (Precision m : kModes) {
    const auto u = run_spmv(sys, e0, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == a(i, 0));
  }
}

TEST_CASE("spmv3d is bit-equal to a replay of its summation order") {
  const StencilSystem sys = make_poisson_like({4, 4, 8}, CoefficientSampler::dominant(), 11);
  for (Precision m : kModes) {
    CAPTURE(to_string(m));
    const auto v = random_vector(sys.dims.points(), storage_format(m), 17);
    const auto order = spmv3d_term_order(sys, m);
    for (std::size_t i = 0; i < order.size(); ++i) {
      REQUIRE(order[i].size() >= 3);
      REQUIRE(order[i].size() <= 7);
      CHECK(order[i].front() == kZm);
    }
    CHECK(bitwise_equal(run_spmv(sys, v, m), replay_spmv(sys, v, m, order)));
  }
}

TEST_CASE("seeded schedules change the order, not the accuracy") {
  const StencilSystem sys = make_poisson_like({4, 3, 16}, CoefficientSampler::dominant(), 5);
  const Precision m = Precision::Mixed;
  const auto v = random_vector(sys.dims.points(), storage_format(m), 9);
  const auto exact = apply_stencil(sys, v);
  // u is stored after each add, so every partial sum rounds at both widths
  const double gamma = 8 * (unit_roundoff(storage_format(m)) + unit_roundoff(accumulate_format(m)));
  const auto base_order = spmv3d_term_order(sys, m);
  bool any_differs = false;
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const Schedule s = Schedule::seeded(seed);
    const auto order = spmv3d_term_order(sys, m, {}, s);
    any_differs = any_differs || order != base_order;
    const auto u = run_spmv(sys, v, m, s);
    CHECK(bitwise_equal(u, replay_spmv(sys, v, m, order)));
    for (std::size_t i = 0; i < u.size(); ++i) {
      double mag = std::fabs(v[i]);
      for (int c = 0; c < kCouplings; ++c) {
        const auto j = static_cast<std::ptrdiff_t>(i) + coupling_offset(sys.dims, c);
        if (sys.coefficient(c, i) != 0.0) mag += std::fabs(sys.coefficient(c, i) * v[static_cast<std::size_t>(j)]);
      }
      CHECK(std::fabs(u[i] - exact[i]) <= gamma * mag);
    }
  }
  CHECK(any_differs);
}

TEST_CASE("spmv3d rejects vectors in the wrong format") {
  const StencilSystem sys = make_poisson_like({2, 2, 4}, CoefficientSampler::dominant(), 1);
  DistributedSystem ds(sys);
  const MemoryTensor v = ds.allocate_vector(Format::Binary32, "v");
  const MemoryTensor u = ds.allocate_vector(Format::Binary32, "u");
  CHECK_THROWS_AS(spmv3d(ds, v, u, Precision::Mixed), std::invalid_argument);
}

TEST_CASE("axpy") {
  const auto y = random_vector(257, Format::Binary16, 1);
  const auto x = random_vector(257, Format::Binary16, 2);

  SUBCASE("a = 0 leaves y unchanged") {
    for (Precision m : kModes) {
      auto r = y;
      axpy(r, 0.0, x, m);
      CHECK(bitwise_equal(r, y));
    }
  }

  SUBCASE("a = 1 and x = -y cancels") {
    std::vector<double> neg(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) neg[i] = -y[i];
    for (Precision m : kModes) {
      auto r = y;
      axpy(r, 1.0, neg, m);
      for (double e : r) CHECK(e == 0.0);
    }
  }

  SUBCASE("mixed matches the elementwise rule") {
    const double a = -0.7071;
    auto r = y;
    axpy(r, a, x, Precision::Mixed);
    const double ah = round_to(Format::Binary16, a);
    for (std::size_t i = 0; i < y.size(); ++i) {
      // y + ah x is exact in binary64 for these magnitudes
      const double want = round_to(Format::Binary16, round_to(Format::Binary32, y[i] + ah * x[i]));
      CHECK(r[i] == want);
    }
  }

  SUBCASE("length mismatch") {
    auto r = y;
    CHECK_THROWS_AS(axpy(r, 1.0, random_vector(3, Format::Binary16, 1), Precision::Mixed), std::invalid_argument);
  }
}

TEST_CASE("dot_local") {
  for (std::size_t n : {1u, 7u, 4096u, 100000u}) {
    const std::vector<double> ones(n, 1.0);
    CHECK(dot_local(ones, ones, Precision::Mixed) == static_cast<double>(n));
  }
  CHECK(dot_local({}, {}, Precision::Mixed) == 0.0);

  const auto x = random_vector(1536, Format::Binary16, 4);
  const auto y = random_vector(1536, Format::Binary16, 5);
  double exact = 0.0, mag = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    exact += x[i] * y[i];
    mag += std::fabs(x[i] * y[i]);
  }
  const double got = dot_local(x, y, Precision::Mixed);
  CHECK(representable(Format::Binary32, got));
  CHECK(std::fabs(got - exact) <= static_cast<double>(x.size()) * 0x1p-24 * mag);
  CHECK(dot_local(x, y, Precision::OracleDouble) == doctest::Approx(exact).epsilon(1e-14));
}

TEST_CASE("tile kernels agree across execution policies") {
  const StencilSystem sys = make_poisson_like({5, 3, 32}, CoefficientSampler::dominant(), 2);
  for (Precision m : kModes) {
    CAPTURE(to_string(m));
    const Format f = storage_format(m);
    const auto gx = random_vector(sys.dims.points(), f, 6);
    const auto gy = random_vector(sys.dims.points(), f, 7);
    std::vector<double> results[2];
    std::vector<double> dots[2];
    int k = 0;
    for (ExecPolicy p : {ExecPolicy::Serial, ExecPolicy::Parallel}) {
      DistributedSystem ds(sys);
      const MemoryTensor x = ds.allocate_vector(f, "x");
      const MemoryTensor y = ds.allocate_vector(f, "y");
      ds.load(x, gx);
      ds.load(y, gy);
      axpy_tiles(ds.fabric(), y, 0.375, x, m, p);
      xpay_tiles(ds.fabric(), y, -1.25, x, m, p);
      dots[k] = dot_tiles(ds.fabric(), x, y, m, p);
      results[k++] = ds.gather(y);
    }
    CHECK(bitwise_equal(results[0], results[1]));
    CHECK(bitwise_equal(dots[0], dots[1]));

    std::vector<double> ref = gy;
    axpy(ref, 0.375, gx, m);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = axpy_element(gx[i], -1.25, ref[i], m);
    CHECK(bitwise_equal(results[0], ref));
  }
}

TEST_CASE("axpy and dot cycle counts follow the lane rate") {
  CHECK(axpy_cycles(1536, Precision::Mixed) == 768);
  CHECK(axpy_cycles(1536, Precision::Single) == 1536);
  CHECK(dot_cycles(0, Precision::Mixed) == 0);
  CHECK(axpy_cycles(1537, Precision::Mixed) == 769);
}

TEST_CASE("spmv2d") {
  SUBCASE("zero couplings on one block copy v") {
    NinePointSystem sys = make_nine_point(4, 4, 1);
    for (int k = 0; k < kNinePoint; ++k) {
      if (k != kNineCenter) std::fill(sys.coeff[k].begin(), sys.coeff[k].end(), 0.0);
    }
    const auto v = random_vector(sys.points(), Format::Binary16, 2);
    for (Precision m : kModes) CHECK(bitwise_equal(spmv2d(sys, {4, 4}, v, m).u, v));
  }

  SUBCASE("2x2 grid of 8x8 blocks against the dense oracle") {
    const NinePointSystem sys = make_nine_point(16, 16, 3);
    const DenseMatrix a = to_dense(sys);
    const auto v = random_vector(sys.points(), Format::Binary16, 4);
    const Spmv2DResult r = spmv2d(sys, {8, 8}, v, Precision::Single);
    REQUIRE(r.u.size() == sys.points());
    for (std::size_t i = 0; i < a.n; ++i) {
      double exact = 0.0, mag = 0.0;
      for (std::size_t j = 0; j < a.n; ++j) {
        exact += a(i, j) * v[j];
        mag += std::fabs(a(i, j) * v[j]);
      }
      CHECK(std::fabs(r.u[i] - exact) <= 9 * 0x1p-24 * mag);
    }
    CHECK(r.useful_flops == 16 * sys.points());
    CHECK(r.performed_flops == 18 * sys.points() + r.halo_words);
    CHECK(r.halo_words > 0);
  }

  SUBCASE("schedule and mode do not break agreement with the binary64 kernel") {
    const NinePointSystem sys = make_nine_point(12, 8, 5);
    const auto v = random_vector(sys.points(), Format::Binary16, 6);
    Spmv2DOptions opt;
    opt.schedule = Schedule::seeded(3);
    const auto exact = apply_nine_point(sys, v);
    const auto r = spmv2d(sys, {4, 4}, v, Precision::OracleDouble, opt);
    for (std::size_t i = 0; i < exact.size(); ++i) CHECK(r.u[i] == doctest::Approx(exact[i]).epsilon(1e-14));
  }

  SUBCASE("infeasible and ragged blocks") {
    const NinePointSystem sys = make_nine_point(39, 39, 1);
    const std::vector<double> v(sys.points(), 0.0);
    CHECK_THROWS_AS(spmv2d(sys, {39, 39}, v, Precision::Mixed), InfeasibleProblem);
    CHECK_THROWS_AS(spmv2d(sys, {8, 8}, v, Precision::Mixed), std::invalid_argument);
  }
}

TEST_CASE("2D block memory and overhead") {
  CHECK(max_square_halo_block() == 38);
  CHECK(halo_block_memory({38, 38}).feasible);
  CHECK(halo_block_memory({38, 38}).bytes == 46832);
  CHECK_FALSE(halo_block_memory({39, 39}).feasible);
  CHECK(halo_block_memory({39, 39}).bytes == 49312);
  for (int b = 8; b <= 38; ++b) {
    CHECK(halo_overhead({b, b}) < 0.2);
    CHECK(halo_overhead({b, b}) <= halo_overhead({b - 1, b - 1}));
  }
  CHECK(halo_overhead({8, 8}) == doctest::Approx(0.1602).epsilon(1e-3));
  CHECK(halo_overhead({38, 38}) == doctest::Approx(0.1318).epsilon(1e-3));
}
