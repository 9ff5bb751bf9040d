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

#include "wse/channels.hpp"

#include <sstream>

namespace wse {

void assign_channels(Fabric& fabric) {
  for (auto& t : fabric.tiles()) {
    const Coord c = t.coord();
    t.router.broadcast_channel = spmv_channel(c.x, c.y);
    for (int d = 0; d < kLinkPorts; ++d) {
      const Dir dir = static_cast<Dir>(d);
      if (t.neighbors() & port_bit(dir)) {
        const Coord n = neighbor_of(c, dir);
        t.router.incoming_channels[static_cast<std::size_t>(d)] = spmv_channel(n.x, n.y);
      } else {
        t.router.incoming_channels[static_cast<std::size_t>(d)].reset();
      }
    }
  }
}

std::vector<ChannelViolation> validate_channels(const Fabric& fabric) {
  std::vector<ChannelViolation> out;
  for (const auto& t : fabric.tiles()) {
    const Coord c = t.coord();
    std::vector<std::pair<std::string, Channel>> seen{{"own", t.router.broadcast_channel}};
    for (int d = 0; d < kLinkPorts; ++d) {
      const Dir dir = static_cast<Dir>(d);
      const auto& in = t.router.incoming_channels[static_cast<std::size_t>(d)];
      const bool has = (t.neighbors() & port_bit(dir)) != 0;
      if (has != in.has_value()) {
        out.push_back({c, std::string("incoming channel presence mismatch on ") + std::string(to_string(dir))});
        continue;
      }
      if (!has) continue;
      const Coord n = neighbor_of(c, dir);
      if (fabric.tile(n).router.broadcast_channel != *in) {
        out.push_back({c, std::string("incoming channel on ") + std::string(to_string(dir)) +
                              " differs from the neighbor's broadcast channel"});
      }
      seen.emplace_back(std::string(to_string(dir)), *in);
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      for (std::size_t j = i + 1; j < seen.size(); ++j) {
        if (seen[i].second == seen[j].second) {
          std::ostringstream os;
          os << seen[i].first << " and " << seen[j].first << " share channel " << int(seen[i].second);
          out.push_back({c, os.str()});
        }
      }
    }
  }
  return out;
}

}  // namespace wse
