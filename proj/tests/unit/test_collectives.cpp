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

#include "wse/collectives.hpp"

using namespace wse;

namespace {

Fabric grid(int w, int h) {
  FabricConfig c;
  c.width = w;
  c.height = h;
  return build_fabric(c);
}

bool all_same_bits(const AllReduceResult& r, std::size_t word = 0) {
  const auto first = std::bit_cast<std::uint64_t>(r.values.front()[word]);
  for (const auto& v : r.values) {
    if (std::bit_cast<std::uint64_t>(v[word]) != first) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("route shape") {
  const ReduceRoute r8 = build_reduce_route(8, 8);
  CHECK(r8.center_cols == std::vector<int>{3, 4});
  CHECK(r8.center_rows == std::vector<int>{3, 4});
  CHECK(r8.root == Coord{3, 3});
  CHECK(r8.role({3, 3}) == ReduceRole::Root);
  CHECK(r8.role({4, 4}) == ReduceRole::ColumnCenter);
  CHECK(r8.role({3, 0}) == ReduceRole::RowCenter);
  CHECK(r8.role({0, 0}) == ReduceRole::RowSender);
  CHECK(r8.col_side(0) == -1);
  CHECK(r8.col_side(4) == 0);
  CHECK(r8.col_side(7) == 1);

  const ReduceRoute r5 = build_reduce_route(5, 3);
  CHECK(r5.center_cols == std::vector<int>{2});
  CHECK(r5.center_rows == std::vector<int>{1});
  CHECK(r5.root == Coord{2, 1});

  const ReduceRoute r1 = build_reduce_route(1, 1);
  CHECK(r1.role({0, 0}) == ReduceRole::Root);

  CHECK_THROWS_AS(build_reduce_route(0, 3), std::invalid_argument);
}

TEST_CASE("every value reaches the root once and every tile hears the result once") {
  for (int w = 1; w <= 12; ++w) {
    for (int h = 1; h <= 12; ++h) {
      const RouteAudit a = audit_reduce_route(build_reduce_route(w, h));
      CAPTURE(w);
      CAPTURE(h);
      CHECK_MESSAGE(a.ok, a.detail);
      for (int c : a.root_count) CHECK(c == 1);
    }
  }
  const RouteAudit a = audit_reduce_route(build_reduce_route(5, 3));
  CHECK(a.root_count.size() == 15);
  CHECK(a.ok);
}

TEST_CASE("exact sums") {
  SUBCASE("identity on one tile") {
    Fabric f = grid(1, 1);
    const auto r = allreduce_sum(f, build_reduce_route(1, 1), std::vector<double>{0.1f});
    CHECK(r.values[0][0] == static_cast<double>(0.1f));
    CHECK(r.cycles == 0);
  }

  SUBCASE("ones on 8x8") {
    Fabric f = grid(8, 8);
    const auto r = allreduce_sum(f, build_reduce_route(8, 8), std::vector<double>(64, 1.0));
    for (const auto& v : r.values) CHECK(v[0] == 64.0);
  }

  SUBCASE("tile index on 4x4") {
    Fabric f = grid(4, 4);
    std::vector<double> locals(16);
    for (int i = 0; i < 16; ++i) locals[static_cast<std::size_t>(i)] = i;
    const auto r = allreduce_sum(f, build_reduce_route(4, 4), locals);
    for (const auto& v : r.values) CHECK(v[0] == 120.0);
  }

  SUBCASE("multi-word payload") {
    Fabric f = grid(3, 5);
    std::vector<std::vector<double>> locals(15, std::vector<double>{1.0, 2.0, -0.5});
    const auto r = allreduce_sum(f, build_reduce_route(3, 5), locals);
    for (const auto& v : r.values) CHECK(v == std::vector<double>{15.0, 30.0, -7.5});
  }
}

TEST_CASE("random binary32 locals") {
  for (auto [w, h] : {std::pair{6, 7}, std::pair{7, 6}, std::pair{9, 9}, std::pair{2, 11}}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(w * 31 + h));
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const auto n = static_cast<std::size_t>(w * h);
    std::vector<double> locals(n);
    double exact = 0.0, mag = 0.0;
    for (auto& x : locals) {
      x = static_cast<double>(static_cast<float>(d(rng)));
      exact += x;
      mag += std::fabs(x);
    }
    Fabric f = grid(w, h);
    const ReduceRoute route = build_reduce_route(w, h);
    const auto r = allreduce_sum(f, route, locals);
    CHECK(all_same_bits(r));
    CHECK(std::fabs(r.values[0][0] - exact) <= static_cast<double>(n) * 0x1p-24 * mag);
    CHECK(r.values[0][0] == allreduce_reference(route, locals, Format::Binary32));

    const auto r64 = allreduce_sum(f, route, locals, Format::Binary64);
    CHECK(r64.values[0][0] == allreduce_reference(route, locals, Format::Binary64));
  }
}

TEST_CASE("latency stays within a quarter above the diameter") {
  for (auto [w, h] : {std::pair{8, 8}, std::pair{6, 7}, std::pair{16, 9}, std::pair{33, 20}, std::pair{2, 1}}) {
    Fabric f = grid(w, h);
    const auto r = allreduce_sum(f, build_reduce_route(w, h), std::vector<double>(static_cast<std::size_t>(w * h), 1.0));
    const auto dia = diameter(w, h);
    CAPTURE(w);
    CAPTURE(h);
    CHECK(r.cycles >= dia);
    CHECK(static_cast<double>(r.cycles) <= 1.25 * static_cast<double>(dia));
  }
}

TEST_CASE("schedules and policies give the same bits") {
  const int w = 7, h = 5;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-10.0, 10.0);
  std::vector<double> locals(35);
  for (auto& x : locals) x = static_cast<double>(static_cast<float>(d(rng)));
  const ReduceRoute route = build_reduce_route(w, h);
  Fabric base = grid(w, h);
  const auto want = allreduce_sum(base, route, locals);
  for (std::uint64_t seed : {1, 2, 3}) {
    Fabric f = grid(w, h);
    f.set_schedule(Schedule::seeded(seed));
    f.set_policy(ExecPolicy::Parallel);
    const auto got = allreduce_sum(f, route, locals);
    CHECK(got.values == want.values);
  }
}

TEST_CASE("predicted cycles") {
  CHECK(predict_allreduce_cycles(602, 595) == 1315);
  CHECK(predict_allreduce_cycles(1, 1) == 0);
  CHECK(predict_allreduce_cycles(8, 8) == 16);
}

TEST_CASE("argument checks") {
  Fabric f = grid(2, 2);
  const ReduceRoute route = build_reduce_route(2, 2);
  CHECK_THROWS_AS(allreduce_sum(f, route, std::vector<double>(3, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(allreduce_sum(f, route, std::vector<std::vector<double>>(4)), std::invalid_argument);
}
