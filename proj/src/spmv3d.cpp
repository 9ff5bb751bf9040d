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

#include <algorithm>
#include <memory>
#include <stdexcept>

#include "wse/channels.hpp"
#include "wse/kernels.hpp"

namespace wse {

namespace {

FabricConfig sized(FabricConfig cfg, const Dims& d) {
  cfg.width = d.x;
  cfg.height = d.y;
  return cfg;
}

/// Channel-0..4 routes: own broadcast to every neighbor plus loopback,
/// neighbor broadcasts to the core.
void install_spmv_routes(Fabric& f) {
  for (auto& t : f.tiles()) {
    for (Channel c = 0; c < kSpmvChannels; ++c) t.router.clear_channel(c);
    const Channel own = t.router.broadcast_channel;
    t.router.add_route(Dir::Core, own, static_cast<PortMask>((t.neighbors() & kAllLinks) | port_bit(Dir::Core)));
    for (int d = 0; d < kLinkPorts; ++d) {
      const auto& in = t.router.incoming_channels[static_cast<std::size_t>(d)];
      if (in) t.router.add_route(static_cast<Dir>(d), *in, port_bit(Dir::Core));
    }
  }
}

/// Direction of the neighbor whose stream a coupling multiplies.
Dir stream_dir(int coupling) {
  switch (coupling) {
    case kXm: return Dir::West;
    case kXp: return Dir::East;
    case kYm: return Dir::North;
    case kYp: return Dir::South;
    default: return Dir::Core;
  }
}

}  // namespace

DistributedSystem::DistributedSystem(const StencilSystem& sys, FabricConfig base)
    : dims_(sys.dims), fabric_(sized(base, sys.dims)) {
  if (!sys.dims.valid()) throw std::invalid_argument("invalid dims " + sys.dims.str());
  assign_channels(fabric_);
  install_spmv_routes(fabric_);
  const auto z = static_cast<std::uint32_t>(dims_.z);
  for (int c = 0; c < kCouplings; ++c) {
    MemoryTensor first{};
    for (auto& t : fabric_.tiles()) {
      const MemoryTensor m = t.allocate_tensor(z, Format::Binary16, "coefficients");
      if (&t == &fabric_.tiles().front()) first = m;
      const auto& col = sys.coeff[static_cast<std::size_t>(c)];
      const std::size_t g0 = dims_.index(t.coord().x, t.coord().y, 0);
      for (std::uint32_t k = 0; k < z; ++k) t.store(Format::Binary16, m.address(k), col[g0 + k]);
    }
    coeff_[static_cast<std::size_t>(c)] = first;
  }
}

MemoryTensor DistributedSystem::allocate_vector(Format f, std::string_view what) {
  const auto z = static_cast<std::uint32_t>(dims_.z);
  MemoryTensor first{};
  bool have = false;
  for (auto& t : fabric_.tiles()) {
    const MemoryTensor padded = t.allocate_tensor(z + 1, f, what);
    t.store(f, padded.address(0), 0.0);
    MemoryTensor v{padded.address(1), z, 1, f};
    if (!have) {
      first = v;
      have = true;
    } else if (v.base != first.base) {
      throw InvariantViolation("tile memory layouts diverged");
    }
  }
  return first;
}

MemoryTensor DistributedSystem::shifted(const MemoryTensor& v) {
  MemoryTensor s = v;
  s.base = v.base - static_cast<std::uint32_t>(format_words(v.format)) * v.stride;
  return s;
}

void DistributedSystem::load(const MemoryTensor& t, const std::vector<double>& global) {
  const auto cols = wse::scatter(dims_, global);
  for (auto& tile : fabric_.tiles()) tile.write(t, cols[column_index(dims_, tile.coord().x, tile.coord().y)]);
}

std::vector<double> DistributedSystem::gather(const MemoryTensor& t) const {
  std::vector<std::vector<double>> cols(fabric_.tile_count());
  for (const auto& tile : fabric_.tiles()) cols[column_index(dims_, tile.coord().x, tile.coord().y)] = tile.read(t);
  return wse::gather(dims_, cols);
}

// ---------------------------------------------------------------------------

namespace {

struct SpmvState {
  MemoryTensor v;
  MemoryTensor u;
  std::array<MemoryTensor, kCouplings> coeff;
  Precision mode = Precision::Half;
  std::uint32_t fifo_capacity = 64;
  int launcher = -1;
  int sumtask = -1;
  int phase = 0;
  // per term FIFO: fifo id, destination offset, expected count, drained count, coupling tag
  struct Term {
    int fifo = -1;
    std::uint32_t offset = 0;
    std::uint32_t expected = 0;
    std::uint32_t drained = 0;
    int tag = -1;
    bool in_flight = false;
  };
  std::vector<Term> terms;
  bool diagonal_done = false;

  bool complete() const {
    if (!diagonal_done) return false;
    for (const auto& t : terms) {
      if (t.drained < t.expected) return false;
    }
    return true;
  }
};

void maybe_finish(Tile& tile, SpmvState& s) {
  if (s.complete()) tile.finish_after(2);  // two-level barrier tree
}

class Launcher : public Task {
 public:
  explicit Launcher(std::shared_ptr<SpmvState> s) : s_(std::move(s)) {}

  void run(Tile& tile) override {
    auto& s = *s_;
    const Format vf = storage_format(s.mode);
    const std::uint32_t z = s.v.length;
    const Channel own = tile.router.broadcast_channel;
    if (s.phase == 0) {
      Instruction tx;
      tx.op = TensorOp::Move;
      tx.dst = FabricTensor{own, z, vf};
      tx.a = s.v;
      tx.thread = 6;
      tile.spawn_thread(std::move(tx));

      Instruction init;
      init.op = TensorOp::Mul;
      init.dst = s.u;
      init.a = s.coeff[kZm];
      init.b = DistributedSystem::shifted(s.v);
      init.mode = s.mode;
      init.term = kZm;
      auto state = s_;
      Tile* t = &tile;
      init.on_complete = [state, t](std::uint32_t) {
        state->phase = 1;
        t->activate(state->launcher);
      };
      tile.issue(std::move(init));
      return;
    }
    if (s.phase != 1) return;
    s.phase = 2;
    auto state = s_;
    Tile* t = &tile;

    for (std::size_t k = 0; k < s.terms.size(); ++k) {
      const auto& term = s.terms[k];
      Instruction mul;
      mul.op = TensorOp::Mul;
      mul.dst = FifoTensor{term.fifo, term.expected};
      mul.mode = s.mode;
      mul.thread = static_cast<int>(k);
      if (term.tag == kZp) {
        mul.a = FabricTensor{own, z - 1, vf, 1, 1};
        MemoryTensor c = s.coeff[kZp];
        c.length = z - 1;
        mul.b = c;
      } else {
        const Dir from = stream_dir(term.tag);
        mul.a = FabricTensor{*tile.router.incoming_channels[static_cast<std::size_t>(from)], z, vf};
        mul.b = s.coeff[static_cast<std::size_t>(term.tag)];
      }
      tile.spawn_thread(std::move(mul));
    }

    Instruction diag;
    diag.op = TensorOp::AddInto;
    diag.dst = s.u;
    diag.a = FabricTensor{own, z, vf, 0, 0};
    diag.mode = s.mode;
    diag.thread = 5;
    diag.term = kDiagonalTerm;
    diag.on_complete = [state, t](std::uint32_t) {
      state->diagonal_done = true;
      maybe_finish(*t, *state);
    };
    tile.spawn_thread(std::move(diag));
  }

 private:
  std::shared_ptr<SpmvState> s_;
};

class SumTask : public Task {
 public:
  explicit SumTask(std::shared_ptr<SpmvState> s) : s_(std::move(s)) {}

  void run(Tile& tile) override {
    auto& s = *s_;
    for (std::size_t k = 0; k < s.terms.size(); ++k) {
      auto& term = s.terms[k];
      if (term.in_flight || term.drained >= term.expected || tile.fifo(term.fifo).count == 0) continue;
      Instruction drain;
      drain.op = TensorOp::AddInto;
      MemoryTensor dst = s.u;
      dst.base = s.u.address(term.offset + term.drained);
      // drain what is queued now so the other FIFOs get a turn
      dst.length = std::min(term.expected - term.drained, tile.fifo(term.fifo).count);
      drain.dst = dst;
      drain.a = FifoTensor{term.fifo, dst.length};
      drain.mode = s.mode;
      drain.drain = true;
      drain.term = term.tag;
      term.in_flight = true;
      auto state = s_;
      Tile* t = &tile;
      drain.on_complete = [state, t, k](std::uint32_t n) {
        auto& tm = state->terms[k];
        tm.drained += n;
        tm.in_flight = false;
        maybe_finish(*t, *state);
      };
      tile.issue(std::move(drain));
    }
  }

 private:
  std::shared_ptr<SpmvState> s_;
};

}  // namespace

KernelStats spmv3d(DistributedSystem& ds, const MemoryTensor& v, const MemoryTensor& u, Precision mode,
                   const Spmv3DOptions& opt) {
  const Format vf = storage_format(mode);
  if (v.format != vf || u.format != vf) throw std::invalid_argument("spmv3d: vectors must use the mode's storage format");
  if (v.length != static_cast<std::uint32_t>(ds.dims().z) || u.length != v.length) {
    throw std::invalid_argument("spmv3d: vector length differs from Z");
  }
  if (opt.fifo_capacity == 0) throw std::invalid_argument("spmv3d: FIFO capacity must be positive");
  Fabric& f = ds.fabric();
  const auto marks = f.memory_marks();
  const std::uint32_t z = v.length;

  for (auto& tile : f.tiles()) {
    auto s = std::make_shared<SpmvState>();
    s->v = v;
    s->u = u;
    s->coeff = ds.coefficients();
    s->mode = mode;
    s->fifo_capacity = opt.fifo_capacity;
    s->launcher = tile.add_task(std::make_unique<Launcher>(s));
    s->sumtask = tile.add_task(std::make_unique<SumTask>(s));

    const Channel own = tile.router.broadcast_channel;
    tile.subscribe(own, z > 1 ? 2 : 1);
    for (Dir d : {Dir::North, Dir::South, Dir::East, Dir::West}) {
      const auto& in = tile.router.incoming_channels[static_cast<std::size_t>(d)];
      if (!in) continue;
      tile.subscribe(*in, 1);
    }
    const Format pf = product_format(mode);
    for (int tag : {kXm, kXp, kYm, kYp, kZp}) {
      SpmvState::Term term;
      term.tag = tag;
      if (tag == kZp) {
        if (z < 2) continue;
        term.expected = z - 1;
      } else {
        if (!(tile.neighbors() & port_bit(stream_dir(tag)))) continue;
        term.expected = z;
      }
      term.fifo = tile.add_fifo(opt.fifo_capacity, pf, s->sumtask);
      s->terms.push_back(term);
    }
    tile.enable_order_log(opt.order_log);
    tile.activate(s->launcher);
  }

  KernelStats st;
  st.cycles = f.run_program();
  st.peak_threads = f.peak_threads();
  st.flops = std::uint64_t{kSpmvFlopsPerPoint} * ds.dims().points();
  f.clear_programs(marks);  // order logs survive until the next run
  return st;
}

std::vector<std::vector<std::int8_t>> spmv3d_term_order(const StencilSystem& sys, Precision mode,
                                                        const Spmv3DOptions& opt, Schedule schedule) {
  DistributedSystem ds(sys);
  ds.fabric().set_schedule(schedule);
  const Format vf = storage_format(mode);
  const MemoryTensor v = ds.allocate_vector(vf, "v");
  const MemoryTensor u = ds.allocate_vector(vf, "u");
  Spmv3DOptions o = opt;
  o.order_log = true;
  spmv3d(ds, v, u, mode, o);
  const Dims& d = sys.dims;
  std::vector<std::vector<std::int8_t>> order(d.points());
  for (const auto& t : ds.fabric().tiles()) {
    for (int k = 0; k < d.z; ++k) {
      order[d.index(t.coord().x, t.coord().y, k)] = t.order_at(u.address(static_cast<std::uint32_t>(k)));
    }
  }
  return order;
}

}  // namespace wse
