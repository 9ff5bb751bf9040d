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

#include "wse/spmv2d.hpp"

#include <memory>
#include <random>
#include <stdexcept>
#include <string>

namespace wse {

NinePointSystem make_nine_point(int nx, int ny, std::uint64_t seed, double scale) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("make_nine_point: empty mesh");
  NinePointSystem s;
  s.nx = nx;
  s.ny = ny;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-scale, scale);
  for (auto& c : s.coeff) c.assign(s.points(), 0.0);
  for (int y = 0; y < ny; ++y) {
    for (int x = 0; x < nx; ++x) {
      const std::size_t i = s.index(x, y);
      for (int k = 0; k < kNinePoint; ++k) {
        if (k == kNineCenter) {
          s.coeff[k][i] = 1.0;
          continue;
        }
        const int xx = x + nine_dx(k), yy = y + nine_dy(k);
        const double c = round_to(Format::Binary16, sym(rng));
        if (xx >= 0 && yy >= 0 && xx < nx && yy < ny) s.coeff[k][i] = c;
      }
    }
  }
  return s;
}

std::vector<double> apply_nine_point(const NinePointSystem& sys, const std::vector<double>& x) {
  std::vector<double> y(sys.points(), 0.0);
  for (int r = 0; r < sys.ny; ++r) {
    for (int c = 0; c < sys.nx; ++c) {
      const std::size_t i = sys.index(c, r);
      double acc = 0.0;
      for (int k = 0; k < kNinePoint; ++k) {
        const int xx = c + nine_dx(k), yy = r + nine_dy(k);
        if (xx < 0 || yy < 0 || xx >= sys.nx || yy >= sys.ny) continue;
        acc += sys.coeff[k][i] * x[sys.index(xx, yy)];
      }
      y[i] = acc;
    }
  }
  return y;
}

DenseMatrix to_dense(const NinePointSystem& sys, std::size_t cap) {
  const std::size_t n = sys.points();
  if (n > cap) throw std::length_error("dense oracle limited to " + std::to_string(cap) + " points");
  DenseMatrix m;
  m.n = n;
  m.a.assign(n * n, 0.0);
  for (int r = 0; r < sys.ny; ++r) {
    for (int c = 0; c < sys.nx; ++c) {
      const std::size_t i = sys.index(c, r);
      for (int k = 0; k < kNinePoint; ++k) {
        const int xx = c + nine_dx(k), yy = r + nine_dy(k);
        if (xx < 0 || yy < 0 || xx >= sys.nx || yy >= sys.ny) continue;
        m.a[i * n + sys.index(xx, yy)] = sys.coeff[k][i];
      }
    }
  }
  return m;
}

std::size_t halo_block_words(HaloBlock2D b) {
  const std::size_t bx = static_cast<std::size_t>(b.bx), by = static_cast<std::size_t>(b.by);
  return 15 * bx * by + (bx + 2) * (by + 2) + 2 * (by + 2) + 2 * bx;
}

MemoryReport halo_block_memory(HaloBlock2D b, std::size_t budget) {
  MemoryReport r;
  r.bytes = 2 * halo_block_words(b);
  r.budget = budget;
  r.feasible = r.bytes <= budget;
  return r;
}

int max_square_halo_block(std::size_t budget) {
  int b = 1;
  while (halo_block_memory({b + 1, b + 1}, budget).feasible) ++b;
  return b;
}

double halo_overhead(HaloBlock2D b) {
  const double pts = static_cast<double>(b.bx) * b.by;
  const double halo_adds = 2.0 * (b.by + 2) + 2.0 * b.bx;
  return (2.0 * pts + halo_adds) / (16.0 * pts);
}

namespace {

struct BlockState {
  Precision mode = Precision::Half;
  int bx = 0, by = 0;
  MemoryTensor ring;  // (bx + 2) x (by + 2), row-major
  int launcher = -1;
  int phase = 0;
  int x_receives = 0;
  int pending = 0;  // threads still running, all rounds
  std::uint64_t received = 0;

  MemoryTensor ring_row(int r, int c0, int len) const {
    MemoryTensor t = ring;
    t.base = ring.address(static_cast<std::uint32_t>(r * (bx + 2) + c0));
    t.length = static_cast<std::uint32_t>(len);
    return t;
  }
  MemoryTensor ring_col(int c) const {
    MemoryTensor t = ring;
    t.base = ring.address(static_cast<std::uint32_t>(c));
    t.length = static_cast<std::uint32_t>(by + 2);
    t.stride = static_cast<std::uint32_t>(bx + 2);
    return t;
  }
};

class HaloLauncher : public Task {
 public:
  explicit HaloLauncher(std::shared_ptr<BlockState> s) : s_(std::move(s)) {}

  void run(Tile& tile) override {
    auto& s = *s_;
    const Format af = accumulate_format(s.mode);
    const PortMask nb = tile.neighbors();
    const auto has = [&](Dir d) { return (nb & port_bit(d)) != 0; };

    if (s.phase == 1) {
      s.phase = 2;
      const auto row = static_cast<std::uint32_t>(s.by + 2);
      if (has(Dir::East)) send(tile, 0, FabricTensor{kHaloEast, row, af}, s.ring_col(s.bx + 1));
      if (has(Dir::West)) send(tile, 1, FabricTensor{kHaloWest, row, af}, s.ring_col(0));
      if (has(Dir::West)) receive(tile, 2, s.ring_col(1), FabricTensor{kHaloEast, row, af}, true);
      if (has(Dir::East)) receive(tile, 3, s.ring_col(s.bx), FabricTensor{kHaloWest, row, af}, true);
      if (s.x_receives == 0) start_y(tile);
      maybe_finish(tile);
    }
  }

  void start_y(Tile& tile) {
    auto& s = *s_;
    const Format af = accumulate_format(s.mode);
    const PortMask nb = tile.neighbors();
    const auto has = [&](Dir d) { return (nb & port_bit(d)) != 0; };
    const auto len = static_cast<std::uint32_t>(s.bx);
    if (has(Dir::North)) send(tile, 4, FabricTensor{kHaloNorth, len, af}, s.ring_row(0, 1, s.bx));
    if (has(Dir::South)) send(tile, 5, FabricTensor{kHaloSouth, len, af}, s.ring_row(s.by + 1, 1, s.bx));
    if (has(Dir::South)) receive(tile, 6, s.ring_row(s.by, 1, s.bx), FabricTensor{kHaloNorth, len, af}, false);
    if (has(Dir::North)) receive(tile, 7, s.ring_row(1, 1, s.bx), FabricTensor{kHaloSouth, len, af}, false);
    s.phase = 3;
  }

  void maybe_finish(Tile& tile) {
    if (s_->phase == 3 && s_->pending == 0) tile.finish_after(1);
  }

 private:
  void send(Tile& tile, int slot, FabricTensor dst, MemoryTensor src) {
    Instruction ins;
    ins.op = TensorOp::Move;
    ins.dst = dst;
    ins.a = src;
    ins.mode = s_->mode;
    ins.thread = slot;
    ins.on_complete = done_cb(tile, false);
    ++s_->pending;
    tile.spawn_thread(std::move(ins));
  }

  void receive(Tile& tile, int slot, MemoryTensor dst, FabricTensor src, bool x_round) {
    Instruction ins;
    ins.op = TensorOp::AddInto;
    ins.dst = dst;
    ins.a = src;
    ins.mode = s_->mode;
    ins.thread = slot;
    ins.on_complete = done_cb(tile, x_round);
    ++s_->pending;
    if (x_round) ++s_->x_receives;
    s_->received += dst.length;
    tile.spawn_thread(std::move(ins));
  }

  std::function<void(std::uint32_t)> done_cb(Tile& tile, bool x_receive) {
    Tile* t = &tile;
    return [this, t, x_receive](std::uint32_t) {
      --s_->pending;
      if (x_receive && --s_->x_receives == 0) start_y(*t);
      maybe_finish(*t);
    };
  }

  std::shared_ptr<BlockState> s_;
};

void install_halo_routes(Fabric& f) {
  for (auto& t : f.tiles()) {
    for (Channel c : {kHaloEast, kHaloWest, kHaloNorth, kHaloSouth}) t.router.clear_channel(c);
    const PortMask nb = t.neighbors();
    const auto link = [&](Channel c, Dir out) {
      if (nb & port_bit(out)) t.router.add_route(Dir::Core, c, port_bit(out));
      const Dir in = opposite(out);
      if (nb & port_bit(in)) {
        t.router.add_route(in, c, port_bit(Dir::Core));
        t.subscribe(c, 1);
      }
    };
    link(kHaloEast, Dir::East);
    link(kHaloWest, Dir::West);
    link(kHaloNorth, Dir::North);
    link(kHaloSouth, Dir::South);
  }
}

}  // namespace

Spmv2DResult spmv2d(const NinePointSystem& sys, HaloBlock2D block, const std::vector<double>& v, Precision mode,
                    const Spmv2DOptions& opt) {
  if (block.bx < 1 || block.by < 1) throw std::invalid_argument("spmv2d: empty block");
  const MemoryReport mem = halo_block_memory(block, opt.base.memory_per_tile);
  if (!mem.feasible) {
    throw InfeasibleProblem("block " + std::to_string(block.bx) + "x" + std::to_string(block.by) +
                            " exceeds tile memory: " + mem.str());
  }
  if (sys.nx % block.bx != 0 || sys.ny % block.by != 0) throw std::invalid_argument("spmv2d: block does not tile the mesh");
  if (v.size() != sys.points()) throw std::invalid_argument("spmv2d: vector length differs from the mesh");

  FabricConfig cfg = opt.base;
  cfg.width = sys.nx / block.bx;
  cfg.height = sys.ny / block.by;
  Fabric f(cfg);
  f.set_schedule(opt.schedule);
  install_halo_routes(f);

  const int bx = block.bx, by = block.by;
  const Format vf = storage_format(mode);
  const Format af = accumulate_format(mode);
  std::vector<std::shared_ptr<BlockState>> states;
  for (auto& tile : f.tiles()) {
    auto s = std::make_shared<BlockState>();
    s->mode = mode;
    s->bx = bx;
    s->by = by;
    const int x0 = tile.coord().x * bx, y0 = tile.coord().y * by;
    const auto pts = static_cast<std::uint32_t>(bx * by);

    // column k of the local block: A(p + offset k, p)
    std::array<MemoryTensor, kNinePoint> col{};
    for (int k = 0; k < kNinePoint; ++k) {
      col[k] = tile.allocate_tensor(pts, Format::Binary16, "matrix column");
      std::vector<double> vals(pts, 0.0);
      for (int j = 0; j < by; ++j) {
        for (int i = 0; i < bx; ++i) {
          const int tx = x0 + i + nine_dx(k), ty = y0 + j + nine_dy(k);
          if (tx < 0 || ty < 0 || tx >= sys.nx || ty >= sys.ny) continue;
          vals[static_cast<std::size_t>(j * bx + i)] = sys.coeff[kNinePoint - 1 - k][sys.index(tx, ty)];
        }
      }
      tile.write(col[k], vals);
    }
    const MemoryTensor vt = tile.allocate_tensor(pts, vf, "v");
    {
      std::vector<double> vals(pts);
      for (int j = 0; j < by; ++j) {
        for (int i = 0; i < bx; ++i) vals[static_cast<std::size_t>(j * bx + i)] = v[sys.index(x0 + i, y0 + j)];
      }
      tile.write(vt, vals);
    }
    s->ring = tile.allocate_tensor(static_cast<std::uint32_t>((bx + 2) * (by + 2)), af, "halo ring");
    tile.write(s->ring, std::vector<double>(s->ring.length, 0.0));

    auto launcher = std::make_unique<HaloLauncher>(s);
    s->launcher = tile.add_task(std::move(launcher));
    s->phase = 1;

    // local FMACs, one instruction per block row and offset
    for (int k = 0; k < kNinePoint; ++k) {
      for (int j = 0; j < by; ++j) {
        Instruction ins;
        ins.op = TensorOp::Fmac;
        ins.dst = s->ring_row(j + 1 + nine_dy(k), 1 + nine_dx(k), bx);
        MemoryTensor a = col[k], b = vt;
        a.base = col[k].address(static_cast<std::uint32_t>(j * bx));
        a.length = static_cast<std::uint32_t>(bx);
        b.base = vt.address(static_cast<std::uint32_t>(j * bx));
        b.length = static_cast<std::uint32_t>(bx);
        ins.a = a;
        ins.b = b;
        ins.mode = mode;
        ins.term = k;
        if (k == kNinePoint - 1 && j == by - 1) {
          Tile* t = &tile;
          auto st = s;
          ins.on_complete = [t, st](std::uint32_t) { t->activate(st->launcher); };
        }
        tile.issue(std::move(ins));
      }
    }
    states.push_back(std::move(s));
  }

  Spmv2DResult r;
  r.cycles = f.run_program();
  r.peak_threads = f.peak_threads();
  r.u.assign(sys.points(), 0.0);
  for (std::size_t t = 0; t < states.size(); ++t) {
    const Tile& tile = f.tiles()[t];
    const auto& s = *states[t];
    const int x0 = tile.coord().x * bx, y0 = tile.coord().y * by;
    for (int j = 0; j < by; ++j) {
      for (int i = 0; i < bx; ++i) {
        r.u[sys.index(x0 + i, y0 + j)] = tile.load(af, s.ring.address(static_cast<std::uint32_t>((j + 1) * (bx + 2) + i + 1)));
      }
    }
    r.halo_words += s.received;
  }
  r.useful_flops = 16 * sys.points();
  r.performed_flops = 18 * sys.points() + r.halo_words;
  return r;
}

}  // namespace wse
