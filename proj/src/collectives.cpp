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

#include "wse/collectives.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace wse {

std::string_view to_string(ReduceRole r) {
  switch (r) {
    case ReduceRole::RowSender: return "row-sender";
    case ReduceRole::RowCenter: return "row-center";
    case ReduceRole::ColumnCenter: return "column-center";
    case ReduceRole::Root: return "root";
  }
  return "?";
}

namespace {

std::vector<int> centers(int n) {
  if (n % 2 == 0) return {n / 2 - 1, n / 2};
  return {n / 2};
}

int side(const std::vector<int>& c, int v) {
  if (v < c.front()) return -1;
  if (v > c.back()) return 1;
  return 0;
}

using RC = ReduceChannels;

}  // namespace

bool ReduceRoute::is_center_col(int x) const { return col_side(x) == 0; }
bool ReduceRoute::is_center_row(int y) const { return row_side(y) == 0; }
int ReduceRoute::col_side(int x) const { return side(center_cols, x); }
int ReduceRoute::row_side(int y) const { return side(center_rows, y); }

ReduceRoute build_reduce_route(int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("reduce route needs a non-empty grid");
  ReduceRoute r;
  r.width = width;
  r.height = height;
  r.center_cols = centers(width);
  r.center_rows = centers(height);
  r.root = Coord{r.center_cols.front(), r.center_rows.front()};
  r.roles.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      ReduceRole role = ReduceRole::RowSender;
      if (r.is_center_col(x)) role = r.is_center_row(y) ? ReduceRole::ColumnCenter : ReduceRole::RowCenter;
      if (Coord{x, y} == r.root) role = ReduceRole::Root;
      r.roles[static_cast<std::size_t>(y) * width + x] = role;
    }
  }
  return r;
}

namespace {

/// Per-tile view of the route: which streams a tile receives and sends.
struct TilePlan {
  bool row_from_west = false;
  bool row_from_east = false;
  int row_send = 0;  // -1 west, +1 east, 0 none
  bool center_col = false;
  bool col_from_north = false;
  bool col_from_south = false;
  int col_send = 0;  // -1 north, +1 south
  bool quad = false;
  bool swap_h = false;
  bool swap_v = false;
  bool broadcasts = false;  // quad tile with a non-empty quadrant
};

struct Quadrant {
  int x0, x1, y0, y1;
};

Quadrant quadrant_of(const ReduceRoute& r, Coord q) {
  Quadrant Q{0, r.width - 1, 0, r.height - 1};
  if (r.center_cols.size() == 2) {
    if (q.x == r.center_cols[0]) Q.x1 = q.x; else Q.x0 = q.x;
  }
  if (r.center_rows.size() == 2) {
    if (q.y == r.center_rows[0]) Q.y1 = q.y; else Q.y0 = q.y;
  }
  return Q;
}

/// Quad tile whose quadrant contains `c`.
Coord owner_of(const ReduceRoute& r, Coord c) {
  const int qx = r.center_cols.size() == 2 && c.x > r.center_cols[0] ? r.center_cols[1] : r.center_cols[0];
  const int qy = r.center_rows.size() == 2 && c.y > r.center_rows[0] ? r.center_rows[1] : r.center_rows[0];
  return {qx, qy};
}

TilePlan plan_for(const ReduceRoute& r, Coord c) {
  TilePlan p;
  const int cs = r.col_side(c.x);
  const int rs = r.row_side(c.y);
  p.row_from_west = c.x > 0 && c.x <= r.center_cols.front();
  p.row_from_east = c.x < r.width - 1 && c.x >= r.center_cols.back();
  p.row_send = cs == -1 ? 1 : cs == 1 ? -1 : 0;
  p.center_col = cs == 0;
  if (p.center_col) {
    p.col_from_north = c.y > 0 && c.y <= r.center_rows.front();
    p.col_from_south = c.y < r.height - 1 && c.y >= r.center_rows.back();
    p.col_send = rs == -1 ? 1 : rs == 1 ? -1 : 0;
  }
  p.quad = p.center_col && rs == 0;
  if (p.quad) {
    p.swap_h = r.center_cols.size() == 2;
    p.swap_v = r.center_rows.size() == 2;
    const Quadrant q = quadrant_of(r, c);
    p.broadcasts = (q.x1 - q.x0 + 1) * (q.y1 - q.y0 + 1) > 1;
  }
  return p;
}

void check_dims(const Fabric& f, const ReduceRoute& r) {
  if (f.width() != r.width || f.height() != r.height) {
    std::ostringstream os;
    os << "reduce route built for " << r.width << "x" << r.height << " but the fabric is " << f.width() << "x"
       << f.height();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

void install_allreduce_routes(Fabric& f, const ReduceRoute& r) {
  check_dims(f, r);
  const PortMask core = port_bit(Dir::Core);
  for (auto& t : f.tiles()) {
    auto& rt = t.router;
    for (Channel c = RC::kRowEast; c <= RC::kBroadcast; ++c) rt.clear_channel(c);
    const Coord c = t.coord();
    const TilePlan p = plan_for(r, c);
    if (p.row_send == 1) rt.add_route(Dir::Core, RC::kRowEast, port_bit(Dir::East));
    if (p.row_send == -1) rt.add_route(Dir::Core, RC::kRowWest, port_bit(Dir::West));
    if (p.row_from_west) rt.add_route(Dir::West, RC::kRowEast, core);
    if (p.row_from_east) rt.add_route(Dir::East, RC::kRowWest, core);
    if (p.col_send == 1) rt.add_route(Dir::Core, RC::kColSouth, port_bit(Dir::South));
    if (p.col_send == -1) rt.add_route(Dir::Core, RC::kColNorth, port_bit(Dir::North));
    if (p.col_from_north) rt.add_route(Dir::North, RC::kColSouth, core);
    if (p.col_from_south) rt.add_route(Dir::South, RC::kColNorth, core);
    if (p.swap_h) {
      const Dir to = c.x == r.center_cols[0] ? Dir::East : Dir::West;
      rt.add_route(Dir::Core, RC::kSwapH, port_bit(to));
      rt.add_route(to, RC::kSwapH, core);
    }
    if (p.swap_v) {
      const Dir to = c.y == r.center_rows[0] ? Dir::South : Dir::North;
      rt.add_route(Dir::Core, RC::kSwapV, port_bit(to));
      rt.add_route(to, RC::kSwapV, core);
    }

    // broadcast: spine along the quad tile's column, branches along rows
    const Coord q = owner_of(r, c);
    const Quadrant Q = quadrant_of(r, q);
    PortMask branches = 0;
    if (c.x <= q.x && c.x - 1 >= Q.x0) branches |= port_bit(Dir::West);
    if (c.x >= q.x && c.x + 1 <= Q.x1) branches |= port_bit(Dir::East);
    if (c == q) {
      PortMask out = branches;
      if (Q.y0 < q.y) out |= port_bit(Dir::North);
      if (Q.y1 > q.y) out |= port_bit(Dir::South);
      if (out) rt.add_route(Dir::Core, RC::kBroadcast, out);
    } else if (c.x == q.x) {
      const bool above = c.y < q.y;
      PortMask out = static_cast<PortMask>(core | branches);
      if (above && c.y - 1 >= Q.y0) out |= port_bit(Dir::North);
      if (!above && c.y + 1 <= Q.y1) out |= port_bit(Dir::South);
      rt.add_route(above ? Dir::South : Dir::North, RC::kBroadcast, out);
    } else {
      rt.add_route(c.x < q.x ? Dir::East : Dir::West, RC::kBroadcast, static_cast<PortMask>(core | branches));
    }
  }
}

namespace {

/// Tiles whose core receives a word injected at `from` on `ch`.
std::vector<Coord> trace(const Fabric& f, Coord from, Channel ch, std::string& err) {
  std::vector<Coord> out;
  struct Hop {
    Coord at;
    Dir in;
  };
  std::vector<Hop> frontier{{from, Dir::Core}};
  std::size_t steps = 0;
  const std::size_t limit = 8 * f.tile_count() + 8;
  while (!frontier.empty()) {
    const Hop h = frontier.back();
    frontier.pop_back();
    if (++steps > limit) {
      err = "routing loop on channel " + std::to_string(int(ch));
      return out;
    }
    const PortMask m = f.tile(h.at).router.forward_set(h.in, ch);
    if (m == 0 && h.in != Dir::Core) {
      err = "word dropped on channel " + std::to_string(int(ch));
      return out;
    }
    for (int d = 0; d < kPorts; ++d) {
      if (!(m & (1u << d))) continue;
      if (static_cast<Dir>(d) == Dir::Core) {
        if (h.in == Dir::Core) continue;  // loopback is not part of the route
        out.push_back(h.at);
        continue;
      }
      const Coord n = neighbor_of(h.at, static_cast<Dir>(d));
      if (!f.contains(n)) {
        err = "route leaves the grid on channel " + std::to_string(int(ch));
        return out;
      }
      frontier.push_back({n, opposite(static_cast<Dir>(d))});
    }
  }
  return out;
}

}  // namespace

RouteAudit audit_reduce_route(const ReduceRoute& r) {
  FabricConfig cfg;
  cfg.width = r.width;
  cfg.height = r.height;
  Fabric f(cfg);
  install_allreduce_routes(f, r);
  const auto n = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height);
  auto idx = [&](Coord c) { return static_cast<std::size_t>(c.y) * r.width + c.x; };

  // holds[t][s]: how many copies of tile s's value tile t currently holds
  std::vector<std::vector<int>> holds(n, std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i) holds[i][i] = 1;

  RouteAudit audit;
  std::string err;
  auto send = [&](Coord from, Channel ch, int expect_receivers) {
    const auto to = trace(f, from, ch, err);
    if (err.empty() && static_cast<int>(to.size()) != expect_receivers) {
      err = "channel " + std::to_string(int(ch)) + " reached " + std::to_string(to.size()) + " tiles";
    }
    return to;
  };
  auto merge = [&](Coord into, const std::vector<int>& add) {
    auto& h = holds[idx(into)];
    for (std::size_t s = 0; s < n; ++s) h[s] += add[s];
  };

  // rows, outer tiles first so partial sums accumulate systolically
  for (int y = 0; y < r.height && err.empty(); ++y) {
    for (int x = 0; x < r.center_cols.front() && err.empty(); ++x) {
      for (const Coord& to : send({x, y}, RC::kRowEast, 1)) merge(to, holds[idx({x, y})]);
    }
    for (int x = r.width - 1; x > r.center_cols.back() && err.empty(); --x) {
      for (const Coord& to : send({x, y}, RC::kRowWest, 1)) merge(to, holds[idx({x, y})]);
    }
  }
  for (int x : r.center_cols) {
    for (int y = 0; y < r.center_rows.front() && err.empty(); ++y) {
      for (const Coord& to : send({x, y}, RC::kColSouth, 1)) merge(to, holds[idx({x, y})]);
    }
    for (int y = r.height - 1; y > r.center_rows.back() && err.empty(); --y) {
      for (const Coord& to : send({x, y}, RC::kColNorth, 1)) merge(to, holds[idx({x, y})]);
    }
  }
  auto swap_round = [&](Channel ch, bool active) {
    if (!active || !err.empty()) return;
    auto snapshot = holds;
    for (int x : r.center_cols) {
      for (int y : r.center_rows) {
        for (const Coord& to : send({x, y}, ch, 1)) {
          auto& h = holds[idx(to)];
          for (std::size_t s = 0; s < n; ++s) h[s] += snapshot[idx({x, y})][s];
        }
      }
    }
  };
  swap_round(RC::kSwapH, r.center_cols.size() == 2);
  swap_round(RC::kSwapV, r.center_rows.size() == 2);

  audit.root_count = holds[idx(r.root)];
  audit.broadcast_count.assign(n, 0);
  for (int x : r.center_cols) {
    for (int y : r.center_rows) {
      if (!err.empty()) break;
      if (holds[idx({x, y})] != audit.root_count) err = "quad tiles disagree";
      const Quadrant Q = quadrant_of(r, {x, y});
      const int receivers = (Q.x1 - Q.x0 + 1) * (Q.y1 - Q.y0 + 1) - 1;
      if (receivers == 0) continue;
      for (const Coord& to : send({x, y}, RC::kBroadcast, receivers)) ++audit.broadcast_count[idx(to)];
    }
  }
  if (err.empty()) {
    for (std::size_t s = 0; s < n; ++s) {
      if (audit.root_count[s] != 1) {
        err = "tile " + std::to_string(s) + " reaches the root " + std::to_string(audit.root_count[s]) + " times";
        break;
      }
    }
  }
  if (err.empty()) {
    for (int y = 0; y < r.height && err.empty(); ++y) {
      for (int x = 0; x < r.width; ++x) {
        const int want = r.in_quad({x, y}) ? 0 : 1;
        if (audit.broadcast_count[idx({x, y})] != want) {
          err = "tile (" + std::to_string(x) + "," + std::to_string(y) + ") receives the broadcast " +
                std::to_string(audit.broadcast_count[idx({x, y})]) + " times";
          break;
        }
      }
    }
  }
  audit.ok = err.empty();
  audit.detail = err;
  return audit;
}

// ---------------------------------------------------------------------------

namespace {

double add_at(Format f, double a, double b) { return f == Format::Binary64 ? a + b : round_to(f, a + b); }

struct ReduceState {
  TilePlan plan;
  Format payload = Format::Binary32;
  std::size_t k = 1;
  int self = -1;
  std::vector<double> local, row, col, h, fin;
  std::size_t row_sent = 0, col_sent = 0, h_sent = 0, v_sent = 0, bc_sent = 0;
  std::size_t h_have = 0;
  bool done = false;
};

class ReduceTask : public Task {
 public:
  explicit ReduceTask(std::shared_ptr<ReduceState> s) : s_(std::move(s)) {}

  void run(Tile& t) override {
    auto& s = *s_;
    const auto& p = s.plan;
    auto bits = [&](double v) { return ScalarValue::from_double(s.payload, v).bits; };
    auto val = [&](std::uint64_t b) { return ScalarValue{s.payload, b}.value(); };

    if (s.row.size() < s.k && (!p.row_from_west || t.rx_available(RC::kRowEast)) &&
        (!p.row_from_east || t.rx_available(RC::kRowWest))) {
      double acc = s.local[s.row.size()];
      if (p.row_from_west) acc = add_at(s.payload, val(t.rx_pop(RC::kRowEast)), acc);
      if (p.row_from_east) acc = add_at(s.payload, acc, val(t.rx_pop(RC::kRowWest)));
      s.row.push_back(acc);
    }
    if (p.row_send != 0 && s.row_sent < s.row.size()) {
      if (t.try_inject(p.row_send == 1 ? RC::kRowEast : RC::kRowWest, bits(s.row[s.row_sent]))) ++s.row_sent;
    }

    if (p.center_col) {
      if (s.col.size() < s.row.size() && (!p.col_from_north || t.rx_available(RC::kColSouth)) &&
          (!p.col_from_south || t.rx_available(RC::kColNorth))) {
        double acc = s.row[s.col.size()];
        if (p.col_from_north) acc = add_at(s.payload, val(t.rx_pop(RC::kColSouth)), acc);
        if (p.col_from_south) acc = add_at(s.payload, acc, val(t.rx_pop(RC::kColNorth)));
        s.col.push_back(acc);
      }
      if (p.col_send != 0 && s.col_sent < s.col.size()) {
        if (t.try_inject(p.col_send == 1 ? RC::kColSouth : RC::kColNorth, bits(s.col[s.col_sent]))) ++s.col_sent;
      }
    }

    if (p.quad) {
      if (p.swap_h && s.h_sent < s.col.size() && t.try_inject(RC::kSwapH, bits(s.col[s.h_sent]))) ++s.h_sent;
      if (s.h.size() < s.col.size() && (!p.swap_h || t.rx_available(RC::kSwapH))) {
        const double mine = s.col[s.h.size()];
        s.h.push_back(p.swap_h ? add_at(s.payload, mine, val(t.rx_pop(RC::kSwapH))) : mine);
      }
      if (p.swap_v && s.v_sent < s.h.size() && t.try_inject(RC::kSwapV, bits(s.h[s.v_sent]))) ++s.v_sent;
      if (s.fin.size() < s.h.size() && (!p.swap_v || t.rx_available(RC::kSwapV))) {
        const double mine = s.h[s.fin.size()];
        s.fin.push_back(p.swap_v ? add_at(s.payload, mine, val(t.rx_pop(RC::kSwapV))) : mine);
      }
      if (p.broadcasts && s.bc_sent < s.fin.size() && t.try_inject(RC::kBroadcast, bits(s.fin[s.bc_sent]))) {
        ++s.bc_sent;
      }
    } else if (s.fin.size() < s.k && t.rx_available(RC::kBroadcast)) {
      s.fin.push_back(val(t.rx_pop(RC::kBroadcast)));
    }

    const bool sends_done = (p.row_send == 0 || s.row_sent == s.k) && (p.col_send == 0 || s.col_sent == s.k) &&
                            (!p.swap_h || s.h_sent == s.k) && (!p.swap_v || s.v_sent == s.k) &&
                            (!p.broadcasts || s.bc_sent == s.k);
    if (s.fin.size() == s.k && sends_done) {
      if (!s.done) {
        s.done = true;
        t.finish_after(0);
      }
      return;
    }
    t.activate(s.self);
  }

 private:
  std::shared_ptr<ReduceState> s_;
};

}  // namespace

AllReduceResult allreduce_sum(Fabric& f, const ReduceRoute& route, const std::vector<std::vector<double>>& locals,
                              Format payload) {
  check_dims(f, route);
  if (locals.size() != f.tile_count()) throw std::invalid_argument("allreduce: one local vector per tile required");
  const std::size_t k = locals.empty() ? 0 : locals.front().size();
  if (k == 0) throw std::invalid_argument("allreduce: empty payload");
  for (const auto& l : locals) {
    if (l.size() != k) throw std::invalid_argument("allreduce: payload sizes differ between tiles");
  }
  install_allreduce_routes(f, route);
  const auto marks = f.memory_marks();

  std::vector<std::shared_ptr<ReduceState>> states;
  states.reserve(f.tile_count());
  for (std::size_t i = 0; i < f.tile_count(); ++i) {
    Tile& t = f.tiles()[i];
    auto s = std::make_shared<ReduceState>();
    s->plan = plan_for(route, t.coord());
    s->payload = payload;
    s->k = k;
    s->local.resize(k);
    for (std::size_t j = 0; j < k; ++j) s->local[j] = round_to(payload, locals[i][j]);
    const auto& p = s->plan;
    if (p.row_from_west) t.subscribe(RC::kRowEast);
    if (p.row_from_east) t.subscribe(RC::kRowWest);
    if (p.col_from_north) t.subscribe(RC::kColSouth);
    if (p.col_from_south) t.subscribe(RC::kColNorth);
    if (p.swap_h) t.subscribe(RC::kSwapH);
    if (p.swap_v) t.subscribe(RC::kSwapV);
    if (!p.quad) t.subscribe(RC::kBroadcast);
    s->self = t.add_task(std::make_unique<ReduceTask>(s));
    t.activate(s->self);
    states.push_back(std::move(s));
  }

  const std::uint64_t ran = f.run_program();
  AllReduceResult res;
  res.cycles = ran > 0 ? ran - 1 : 0;
  res.values.reserve(states.size());
  for (const auto& s : states) res.values.push_back(s->fin);
  f.clear_programs(marks);
  return res;
}

AllReduceResult allreduce_sum(Fabric& f, const ReduceRoute& route, const std::vector<double>& locals, Format payload) {
  std::vector<std::vector<double>> l(locals.size());
  for (std::size_t i = 0; i < locals.size(); ++i) l[i] = {locals[i]};
  return allreduce_sum(f, route, l, payload);
}

double allreduce_reference(const ReduceRoute& r, const std::vector<double>& locals, Format payload) {
  if (locals.size() != r.roles.size()) throw std::invalid_argument("allreduce_reference: size mismatch");
  auto at = [&](int x, int y) { return round_to(payload, locals[static_cast<std::size_t>(y) * r.width + x]); };
  // row totals at the center columns
  std::vector<std::vector<double>> row(static_cast<std::size_t>(r.height));
  for (int y = 0; y < r.height; ++y) {
    for (int c : r.center_cols) {
      double acc = 0.0;
      bool have_west = false;
      if (c == r.center_cols.front() && c > 0) {
        acc = at(0, y);
        for (int x = 1; x < c; ++x) acc = add_at(payload, acc, at(x, y));
        have_west = true;
      }
      acc = have_west ? add_at(payload, acc, at(c, y)) : at(c, y);
      if (c == r.center_cols.back() && c < r.width - 1) {
        double east = at(r.width - 1, y);
        for (int x = r.width - 2; x > c; --x) east = add_at(payload, east, at(x, y));
        acc = add_at(payload, acc, east);
      }
      row[static_cast<std::size_t>(y)].push_back(acc);
    }
  }
  // column totals at the quad
  std::vector<std::vector<double>> quad(r.center_cols.size());
  for (std::size_t ci = 0; ci < r.center_cols.size(); ++ci) {
    auto rv = [&](int y) { return row[static_cast<std::size_t>(y)][ci]; };
    for (int c : r.center_rows) {
      double acc = 0.0;
      bool have_north = false;
      if (c == r.center_rows.front() && c > 0) {
        acc = rv(0);
        for (int y = 1; y < c; ++y) acc = add_at(payload, acc, rv(y));
        have_north = true;
      }
      acc = have_north ? add_at(payload, acc, rv(c)) : rv(c);
      if (c == r.center_rows.back() && c < r.height - 1) {
        double south = rv(r.height - 1);
        for (int y = r.height - 2; y > c; --y) south = add_at(payload, south, rv(y));
        acc = add_at(payload, acc, south);
      }
      quad[ci].push_back(acc);
    }
  }
  // horizontal exchange, then vertical
  std::vector<double> h;
  for (std::size_t ri = 0; ri < r.center_rows.size(); ++ri) {
    h.push_back(r.center_cols.size() == 2 ? add_at(payload, quad[0][ri], quad[1][ri]) : quad[0][ri]);
  }
  return h.size() == 2 ? add_at(payload, h[0], h[1]) : h[0];
}

std::uint64_t predict_allreduce_cycles(int width, int height) {
  const std::uint64_t d = diameter(width, height);
  return (d * 11 + 9) / 10;
}

}  // namespace wse
