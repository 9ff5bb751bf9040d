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

#include <sstream>
#include <string>

#include "wse/channels.hpp"
#include "wse/fabric.hpp"
#include "wse/kernels.hpp"

using namespace wse;

namespace {

FabricConfig grid(int w, int h) {
  FabricConfig c;
  c.width = w;
  c.height = h;
  return c;
}

Instruction move(MemoryTensor dst, MemoryTensor src, int slot) {
  Instruction ins;
  ins.op = TensorOp::Move;
  ins.dst = dst;
  ins.a = src;
  ins.thread = slot;
  return ins;
}

/// Channel 7 from (0,0) eastward to (len,0).
void route_east(Fabric& f, int len, Channel c = 7) {
  f.tile(0, 0).router.add_route(Dir::Core, c, port_bit(Dir::East));
  for (int x = 1; x < len; ++x) f.tile(x, 0).router.add_route(Dir::West, c, port_bit(Dir::East));
  f.tile(len, 0).router.add_route(Dir::West, c, port_bit(Dir::Core));
  f.tile(len, 0).subscribe(c, 1);
}

}  // namespace

TEST_CASE("build_fabric") {
  CHECK_THROWS_AS(build_fabric(grid(0, 3)), std::invalid_argument);
  CHECK_THROWS_AS(build_fabric(grid(3, 0)), std::invalid_argument);

  Fabric one = build_fabric(grid(1, 1));
  CHECK(one.tile_count() == 1);
  CHECK(one.tile(0, 0).neighbor_count() == 0);

  Fabric f = build_fabric(grid(3, 3));
  CHECK(f.tile(1, 1).neighbor_count() == 4);
  CHECK(f.tile(0, 0).neighbor_count() == 2);
  CHECK(f.tile(2, 2).neighbor_count() == 2);
  CHECK(f.tile(1, 0).neighbor_count() == 3);
  CHECK(f.config().memory_per_tile == 49152);
  CHECK(f.config().max_threads_per_tile == 9);
}

TEST_CASE("full-size fabric tile count") {
  CHECK(build_fabric(grid(602, 595)).tile_count() == 358190);
}

TEST_CASE("empty step advances only the clock") {
  Fabric f = build_fabric(grid(2, 2));
  f.step();
  CHECK(f.cycle() == 1);
  CHECK(f.quiescent());
  CHECK(f.link_transfers() == 0);
}

TEST_CASE("a word travels one hop per cycle") {
  Fabric f = build_fabric(grid(6, 1));
  route_east(f, 5);
  REQUIRE(f.inject({0, 0}, 7, 0x1234));
  int steps = 0;
  while (!f.tile(5, 0).rx_available(7) && steps < 20) {
    f.step();
    ++steps;
  }
  CHECK(steps == 5);
  CHECK(f.tile(5, 0).rx_pop(7) == 0x1234);
  CHECK(f.conservation().balanced());
}

TEST_CASE("one injection fans out to four neighbors in a single cycle") {
  Fabric f = build_fabric(grid(3, 3));
  const Channel c = 3;
  f.tile(1, 1).router.add_route(Dir::Core, c, kAllLinks);
  for (Coord n : {Coord{1, 0}, Coord{1, 2}, Coord{0, 1}, Coord{2, 1}}) {
    Tile& t = f.tile(n);
    for (int d = 0; d < kLinkPorts; ++d) t.router.add_route(static_cast<Dir>(d), c, port_bit(Dir::Core));
    t.subscribe(c, 1);
  }
  REQUIRE(f.inject({1, 1}, c, 42));
  f.step();
  for (Coord n : {Coord{1, 0}, Coord{1, 2}, Coord{0, 1}, Coord{2, 1}}) {
    CHECK(f.tile(n).rx_available(c));
  }
  CHECK_NOTHROW(f.check_invariants());
}

TEST_CASE("thread limit and memory races") {
  Fabric f = build_fabric(grid(1, 1));
  Tile& t = f.tile(0, 0);
  const MemoryTensor src = t.allocate_tensor(64, Format::Binary16, "src");

  SUBCASE("tenth thread") {
    for (int i = 0; i < 9; ++i) {
      const MemoryTensor dst = t.allocate_tensor(64, Format::Binary16, "dst");
      CHECK_NOTHROW(t.spawn_thread(move(dst, src, i)));  // shared reads are fine
    }
    const MemoryTensor dst = t.allocate_tensor(64, Format::Binary16, "dst");
    CHECK_THROWS_AS(t.spawn_thread(move(dst, src, 9)), ThreadLimitExceeded);
  }

  SUBCASE("overlapping writes") {
    const MemoryTensor a = t.allocate_tensor(32, Format::Binary16, "a");
    CHECK_NOTHROW(t.spawn_thread(move(a, src, 0)));
    MemoryTensor overlap = a;
    overlap.base += 16;
    CHECK_THROWS_AS(t.spawn_thread(move(overlap, src, 1)), MemoryRaceDetected);
    MemoryTensor disjoint = a;
    disjoint.base = a.end_address();
    CHECK_NOTHROW(t.spawn_thread(move(disjoint, src, 2)));
  }

  SUBCASE("writing a region another thread reads") {
    const MemoryTensor a = t.allocate_tensor(32, Format::Binary16, "a");
    CHECK_NOTHROW(t.spawn_thread(move(a, src, 0)));
    CHECK_THROWS_AS(t.spawn_thread(move(src, a, 1)), MemoryRaceDetected);
  }

  SUBCASE("interleaved strided columns do not conflict") {
    const MemoryTensor block = t.allocate_tensor(64, Format::Binary16, "block");
    MemoryTensor even = block, odd = block;
    even.length = odd.length = 32;
    even.stride = odd.stride = 2;
    odd.base = block.address(1);
    MemoryTensor half = src;
    half.length = 32;
    CHECK_NOTHROW(t.spawn_thread(move(even, half, 0)));
    CHECK_NOTHROW(t.spawn_thread(move(odd, half, 1)));
  }
}

TEST_CASE("memory budget") {
  Fabric f = build_fabric(grid(1, 1));
  Tile& t = f.tile(0, 0);
  CHECK_NOTHROW(t.allocate(24576, "all of it"));
  CHECK_THROWS_AS(t.allocate(1, "one more"), MemoryBudgetExceeded);
}

TEST_CASE("a receive with no sender is reported as deadlock") {
  Fabric f = build_fabric(grid(2, 1));
  Tile& t = f.tile(1, 0);
  t.router.add_route(Dir::West, 9, port_bit(Dir::Core));
  t.subscribe(9, 1);
  Instruction ins;
  ins.op = TensorOp::Move;
  ins.dst = t.allocate_tensor(4, Format::Binary16, "dst");
  ins.a = FabricTensor{9, 4, Format::Binary16};
  ins.thread = 0;
  t.spawn_thread(std::move(ins));
  t.finish_after(0);
  CHECK_THROWS_AS(f.run_until([&] { return t.live_threads() == 0; }, 1000), DeadlockError);
}

TEST_CASE("trace lines") {
  Fabric f = build_fabric(grid(3, 1));
  route_east(f, 2);
  std::ostringstream os;
  f.set_trace(&os);
  f.inject({0, 0}, 7, 0xabc);
  for (int i = 0; i < 3; ++i) f.step();
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    int commas = 0;
    for (char ch : line) commas += ch == ',';
    CHECK(commas == 5);
  }
  CHECK(lines >= 3);
}

namespace {

struct SpmvRun {
  std::uint64_t cycles = 0;
  std::vector<std::uint64_t> bits;
};

SpmvRun run_spmv(ExecPolicy policy, Schedule schedule, bool checked) {
  const StencilSystem sys = make_poisson_like({5, 4, 12}, CoefficientSampler::dominant(), 21);
  DistributedSystem ds(sys);
  ds.fabric().set_policy(policy);
  ds.fabric().set_schedule(schedule);
  ds.fabric().set_checked(checked);
  const MemoryTensor v = ds.allocate_vector(Format::Binary16, "v");
  const MemoryTensor u = ds.allocate_vector(Format::Binary16, "u");
  std::vector<double> g(sys.dims.points());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = round_to(Format::Binary16, 0.01 * static_cast<double>(i % 97) - 0.4);
  ds.load(v, g);
  SpmvRun r;
  r.cycles = spmv3d(ds, v, u, Precision::Mixed).cycles;
  for (const auto& t : ds.fabric().tiles()) {
    for (std::uint32_t k = 0; k < u.length; ++k) r.bits.push_back(t.load_bits(Format::Binary16, u.address(k)));
  }
  CHECK(ds.fabric().conservation().balanced());
  CHECK(ds.fabric().quiescent());
  return r;
}

}  // namespace

TEST_CASE("determinism across runs and execution policies") {
  const SpmvRun a = run_spmv(ExecPolicy::Serial, Schedule::deterministic(), false);
  const SpmvRun b = run_spmv(ExecPolicy::Serial, Schedule::deterministic(), false);
  const SpmvRun p = run_spmv(ExecPolicy::Parallel, Schedule::deterministic(), false);
  CHECK(a.cycles == b.cycles);
  CHECK(a.bits == b.bits);
  CHECK(a.cycles == p.cycles);
  CHECK(a.bits == p.bits);

  const SpmvRun s1 = run_spmv(ExecPolicy::Serial, Schedule::seeded(5), false);
  const SpmvRun s2 = run_spmv(ExecPolicy::Parallel, Schedule::seeded(5), false);
  CHECK(s1.bits == s2.bits);
  CHECK(s1.cycles == s2.cycles);
}

TEST_CASE("checked mode accepts a valid program") {
  CHECK_NOTHROW(run_spmv(ExecPolicy::Serial, Schedule::deterministic(), true));
}
