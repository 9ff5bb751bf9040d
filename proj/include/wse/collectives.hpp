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
 * @file collectives.hpp
 * @brief Scalar AllReduce over the tile grid.
 *
 * Rows reduce systolically from both ends toward one or two center
 * columns, the center columns reduce the same way toward one or two center
 * rows, the tiles of the central quad exchange partial sums (horizontal
 * then vertical) so they all hold the total, and each quad tile broadcasts
 * it over its quadrant along a spine and horizontal branches.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wse/fabric.hpp"

namespace wse {

/// RowSender tiles lie off the center columns; RowCenter tiles hold a row
/// total; ColumnCenter tiles form the central quad with Root.
enum class ReduceRole : std::uint8_t { RowSender, RowCenter, ColumnCenter, Root };
std::string_view to_string(ReduceRole r);

/// Channels used by the AllReduce, one per phase and direction.
struct ReduceChannels {
  static constexpr Channel kRowEast = 5;   // west half sends east
  static constexpr Channel kRowWest = 6;   // east half sends west
  static constexpr Channel kColSouth = 7;  // top half sends south
  static constexpr Channel kColNorth = 8;  // bottom half sends north
  static constexpr Channel kSwapH = 9;     // quad exchange across the center columns
  static constexpr Channel kSwapV = 10;    // quad exchange across the center rows
  static constexpr Channel kBroadcast = 11;
};

struct ReduceRoute {
  int width = 1;
  int height = 1;
  std::vector<int> center_cols;  // one or two, ascending
  std::vector<int> center_rows;
  Coord root;
  std::vector<ReduceRole> roles;  // tile order y * width + x

  ReduceRole role(Coord c) const { return roles[static_cast<std::size_t>(c.y) * width + c.x]; }
  bool is_center_col(int x) const;
  bool is_center_row(int y) const;
  bool in_quad(Coord c) const { return is_center_col(c.x) && is_center_row(c.y); }
  /// -1 west of the centers, 0 on a center, +1 east.
  int col_side(int x) const;
  int row_side(int y) const;
};

/// Center columns at floor(W/2)-1 and floor(W/2) for even W, floor(W/2)
/// for odd W; likewise for rows. Root is the north-west quad tile.
ReduceRoute build_reduce_route(int width, int height);

/// Program channels 5..11 of every router for `route`.
void install_allreduce_routes(Fabric& f, const ReduceRoute& route);

struct RouteAudit {
  bool ok = false;
  std::vector<int> root_count;       // times each tile's value reaches Root
  std::vector<int> broadcast_count;  // broadcast words delivered to each tile
  std::string detail;
};

/// Trace every tile's contribution through the programmed router tables.
RouteAudit audit_reduce_route(const ReduceRoute& route);

struct AllReduceResult {
  std::vector<std::vector<double>> values;  // per tile, one entry per payload word
  std::uint64_t cycles = 0;                 // after the injection cycle
};

/// Sum `locals[t][j]` over tiles t for each payload word j, rounding at
/// `payload` (binary32 unless an fp64 oracle run). All tiles receive the
/// same bits.
AllReduceResult allreduce_sum(Fabric& f, const ReduceRoute& route, const std::vector<std::vector<double>>& locals,
                              Format payload = Format::Binary32);
/// Single-word convenience.
AllReduceResult allreduce_sum(Fabric& f, const ReduceRoute& route, const std::vector<double>& locals,
                              Format payload = Format::Binary32);

/// The fixed association order evaluated sequentially, for oracles.
double allreduce_reference(const ReduceRoute& route, const std::vector<double>& locals, Format payload);

inline std::uint64_t diameter(int width, int height) {
  return static_cast<std::uint64_t>(width - 1) + static_cast<std::uint64_t>(height - 1);
}
/// ceil(1.1 * diameter).
std::uint64_t predict_allreduce_cycles(int width, int height);

}  // namespace wse
