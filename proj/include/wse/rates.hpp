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

#include "wse/scalar.hpp"

namespace wse {

enum class OpClass : std::uint8_t { Move, Add, Mul, Fmac };

/// Per-core, per-cycle SIMD lane counts. Shared by the cycle simulator and
/// the analytical model so the two agree on what one cycle can do.
struct RateTable {
  static constexpr int lanes(OpClass op, Precision m) {
    switch (m) {
      case Precision::Half: return 4;
      case Precision::Mixed: return op == OpClass::Mul ? 4 : 2;
      case Precision::Single: return op == OpClass::Add ? 2 : 1;
      case Precision::OracleDouble: return 1;
    }
    return 1;
  }

  /// Flops retired per cycle by FMAC-path work.
  static constexpr int fmac_flops_per_cycle(Precision m) { return 2 * lanes(OpClass::Fmac, m); }

  /// Datapath budget per cycle in integer units; an element of `op` costs
  /// kUnitsPerCycle / lanes(op, m).
  static constexpr int kUnitsPerCycle = 12;
  static constexpr int cost_units(OpClass op, Precision m) {
    return op == OpClass::Move ? 0 : kUnitsPerCycle / lanes(op, m);
  }

  static constexpr int read_words_per_cycle = 8;
  static constexpr int write_words_per_cycle = 4;
};

}  // namespace wse
