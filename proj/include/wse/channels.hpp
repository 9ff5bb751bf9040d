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
#pragma once

#include <string>
#include <vector>

#include "wse/fabric.hpp"

namespace wse {

/// Number of channels used by the SpMV broadcast tessellation.
inline constexpr int kSpmvChannels = 5;

/// Broadcast channel of tile (x, y): (x + 2y) mod 5.
constexpr Channel spmv_channel(int x, int y) { return static_cast<Channel>((x + 2 * y) % kSpmvChannels); }

/// Fill broadcast_channel and incoming_channels of every router. Forwarding
/// tables are left to the kernels.
void assign_channels(Fabric& fabric);

struct ChannelViolation {
  Coord tile;
  std::string what;
};

/// Checks own and incoming channels are pairwise distinct at every tile and
/// that incoming_channels match the neighbors' broadcast channels.
std::vector<ChannelViolation> validate_channels(const Fabric& fabric);

}  // namespace wse
