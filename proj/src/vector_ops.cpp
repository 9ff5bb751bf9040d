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

#include <stdexcept>

#include "wse/kernels.hpp"

namespace wse {

double axpy_element(double y, double a, double x, Precision mode) {
  const double ao = round_to(operand_format(mode), a);
  return round_to(storage_format(mode), arith::fmac(y, ao, x, mode));
}

void axpy(std::vector<double>& y, double a, const std::vector<double>& x, Precision mode) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = axpy_element(y[i], a, x[i], mode);
}

double dot_local(const std::vector<double>& x, const std::vector<double>& y, Precision mode) {
  if (x.size() != y.size()) throw std::invalid_argument("dot_local: length mismatch");
  const Precision m = dot_mode(mode);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc = arith::fmac(acc, x[i], y[i], m);
  return acc;
}

namespace {

void check_pair(const MemoryTensor& a, const MemoryTensor& b, const char* what) {
  if (a.length != b.length) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

template <class F>
void over_tiles(std::size_t n, ExecPolicy policy, F&& f) {
  const auto count = static_cast<std::int64_t>(n);
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
  }
}

}  // namespace

void axpy_tiles(Fabric& f, const MemoryTensor& y, double a, const MemoryTensor& x, Precision mode, ExecPolicy policy) {
  check_pair(y, x, "axpy");
  auto& tiles = f.tiles();
  over_tiles(tiles.size(), policy, [&](std::size_t t) {
    Tile& tile = tiles[t];
    for (std::uint32_t i = 0; i < y.length; ++i) {
      const double yi = tile.load(y.format, y.address(i));
      tile.store(y.format, y.address(i), axpy_element(yi, a, tile.load(x.format, x.address(i)), mode));
    }
  });
}

void xpay_tiles(Fabric& f, const MemoryTensor& y, double a, const MemoryTensor& x, Precision mode, ExecPolicy policy) {
  check_pair(y, x, "xpay");
  auto& tiles = f.tiles();
  over_tiles(tiles.size(), policy, [&](std::size_t t) {
    Tile& tile = tiles[t];
    for (std::uint32_t i = 0; i < y.length; ++i) {
      const double yi = tile.load(y.format, y.address(i));
      tile.store(y.format, y.address(i), axpy_element(tile.load(x.format, x.address(i)), a, yi, mode));
    }
  });
}

std::vector<double> dot_tiles(const Fabric& f, const MemoryTensor& x, const MemoryTensor& y, Precision mode,
                              ExecPolicy policy) {
  check_pair(x, y, "dot");
  const auto& tiles = f.tiles();
  std::vector<double> out(tiles.size());
  const Precision m = dot_mode(mode);
  over_tiles(tiles.size(), policy, [&](std::size_t t) {
    const Tile& tile = tiles[t];
    double acc = 0.0;
    for (std::uint32_t i = 0; i < x.length; ++i) {
      acc = arith::fmac(acc, tile.load(x.format, x.address(i)), tile.load(y.format, y.address(i)), m);
    }
    out[t] = round_to(scalar_format(mode), acc);
  });
  return out;
}

void copy_tiles(Fabric& f, const MemoryTensor& dst, const MemoryTensor& src) {
  check_pair(dst, src, "copy");
  for (auto& tile : f.tiles()) {
    for (std::uint32_t i = 0; i < dst.length; ++i) {
      tile.store(dst.format, dst.address(i), tile.load(src.format, src.address(i)));
    }
  }
}

std::uint64_t axpy_cycles(std::uint32_t z, Precision mode) {
  const auto lanes = static_cast<std::uint64_t>(RateTable::lanes(OpClass::Fmac, mode));
  return (z + lanes - 1) / lanes;
}

std::uint64_t dot_cycles(std::uint32_t z, Precision mode) { return axpy_cycles(z, dot_mode(mode)); }

}  // namespace wse
