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

#include "wse/problem.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace wse {

std::string Dims::str() const { return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z); }

std::optional<Dims> parse_dims(const std::string& s) {
  Dims d;
  char sep1 = 0;
  char sep2 = 0;
  std::istringstream is(s);
  if (!(is >> d.x >> sep1 >> d.y >> sep2 >> d.z) || sep1 != 'x' || sep2 != 'x') return std::nullopt;
  char extra = 0;
  if (is >> extra) return std::nullopt;
  return d;
}

std::ptrdiff_t coupling_offset(const Dims& d, int coupling) {
  const auto yz = static_cast<std::ptrdiff_t>(d.y) * d.z;
  switch (coupling) {
    case kXm: return -yz;
    case kXp: return yz;
    case kYm: return -d.z;
    case kYp: return d.z;
    case kZp: return 1;
    case kZm: return -1;
    default: throw std::invalid_argument("coupling index out of range");
  }
}

namespace {

/// Whether point (i, j, k) has an in-mesh neighbor through `coupling`.
bool has_neighbor(const Dims& d, int i, int j, int k, int coupling) {
  switch (coupling) {
    case kXm: return i > 0;
    case kXp: return i + 1 < d.x;
    case kYm: return j > 0;
    case kYp: return j + 1 < d.y;
    case kZp: return k + 1 < d.z;
    case kZm: return k > 0;
    default: return false;
  }
}

double rnd16(double v) { return round_to(Format::Binary16, v); }

}  // namespace

double StencilSystem::max_offdiag_row_sum() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < dims.points(); ++i) {
    double s = 0.0;
    for (const auto& c : coeff) s += std::fabs(c[i]);
    worst = std::max(worst, s);
  }
  return worst;
}

bool StencilSystem::well_formed(std::string* why) const {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  const std::size_t n = dims.points();
  if (rhs.size() != n) return fail("rhs size mismatch");
  for (const auto& c : coeff) {
    if (c.size() != n) return fail("coefficient size mismatch");
  }
  for (int i = 0; i < dims.x; ++i) {
    for (int j = 0; j < dims.y; ++j) {
      for (int k = 0; k < dims.z; ++k) {
        const std::size_t g = dims.index(i, j, k);
        for (int c = 0; c < kCouplings; ++c) {
          const double v = coefficient(c, g);
          if (!std::isfinite(v) || !representable(Format::Binary16, v)) return fail("coefficient not binary16");
          if (!has_neighbor(dims, i, j, k, c) && v != 0.0) return fail("nonzero coupling across the boundary");
        }
        if (!std::isfinite(rhs[g]) || !representable(Format::Binary16, rhs[g])) return fail("rhs not binary16");
      }
    }
  }
  return true;
}

StencilSystem make_poisson_like(const Dims& dims, const CoefficientSampler& sampler, std::uint64_t seed) {
  if (!dims.valid()) throw std::invalid_argument("dims must be at least 1x1x1, got " + dims.str());
  StencilSystem sys;
  sys.dims = dims;
  const std::size_t n = dims.points();
  for (auto& c : sys.coeff) c.assign(n, 0.0);
  sys.rhs.assign(n, 0.0);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // per-axis wind signs for the convection term
  const std::array<double, 3> wind_sign{1.0, -1.0, 1.0};

  for (int i = 0; i < dims.x; ++i) {
    for (int j = 0; j < dims.y; ++j) {
      for (int k = 0; k < dims.z; ++k) {
        const std::size_t g = dims.index(i, j, k);
        std::array<double, kCouplings> raw{};
        double diag = 1.0;
        switch (sampler.kind) {
          case SamplerKind::Zero: break;
          case SamplerKind::Dominant: {
            double total = 0.0;
            for (int c = 0; c < kCouplings; ++c) {
              raw[static_cast<std::size_t>(c)] = sym(rng);
              if (has_neighbor(dims, i, j, k, c)) total += std::fabs(raw[static_cast<std::size_t>(c)]);
            }
            const double target = sampler.dominance * (0.3 + 0.7 * unit(rng));
            diag = total > 0.0 ? total / target : 1.0;
            break;
          }
          case SamplerKind::ConvectionDiffusion: {
            diag = 0.0;
            for (int axis = 0; axis < 3; ++axis) {
              const double kappa = 1.0 + sampler.jitter * sym(rng);
              const double peclet = sampler.wind * wind_sign[static_cast<std::size_t>(axis)] * (1.0 + sampler.jitter * sym(rng));
              const int minus = axis == 0 ? kXm : axis == 1 ? kYm : kZm;
              const int plus = axis == 0 ? kXp : axis == 1 ? kYp : kZp;
              raw[static_cast<std::size_t>(minus)] = -kappa * (1.0 + 0.5 * peclet);
              raw[static_cast<std::size_t>(plus)] = -kappa * (1.0 - 0.5 * peclet);
              diag += 2.0 * kappa;
            }
            diag += sampler.shift;
            break;
          }
        }
        for (int c = 0; c < kCouplings; ++c) {
          if (!has_neighbor(dims, i, j, k, c)) continue;
          sys.coeff[static_cast<std::size_t>(c)][g] = rnd16(raw[static_cast<std::size_t>(c)] / diag);
        }
        sys.rhs[g] = rnd16(sampler.kind == SamplerKind::ConvectionDiffusion ? unit(rng) : sym(rng));
      }
    }
  }
  return sys;
}

std::vector<double> apply_stencil(const StencilSystem& sys, const std::vector<double>& x) {
  const Dims& d = sys.dims;
  if (x.size() != d.points()) throw std::invalid_argument("apply_stencil: length mismatch");
  std::vector<double> y(x.size());
  for (int i = 0; i < d.x; ++i) {
    for (int j = 0; j < d.y; ++j) {
      for (int k = 0; k < d.z; ++k) {
        const std::size_t g = d.index(i, j, k);
        double s = x[g];
        for (int c = 0; c < kCouplings; ++c) {
          if (!has_neighbor(d, i, j, k, c)) continue;
          s += sys.coefficient(c, g) * x[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(g) + coupling_offset(d, c))];
        }
        y[g] = s;
      }
    }
  }
  return y;
}

std::string MemoryReport::str() const {
  return std::to_string(bytes) + " bytes / " + std::to_string(budget) + (feasible ? " (feasible)" : " (infeasible)");
}

MemoryReport memory_footprint(long long z, std::size_t budget) {
  if (z < 0) throw std::invalid_argument("Z must be non-negative");
  MemoryReport r;
  r.budget = budget;
  r.bytes = static_cast<std::size_t>(z) * kVectorsPerTile * 2;
  r.feasible = r.bytes <= budget;
  return r;
}

long long max_feasible_z(std::size_t budget) { return static_cast<long long>(budget / (kVectorsPerTile * 2)); }

std::size_t oracle_cap() {
  if (const char* env = std::getenv("WSE_ORACLE_CAP")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return kDefaultOracleCap;
}

DenseMatrix to_dense(const StencilSystem& sys, std::size_t cap) {
  const Dims& d = sys.dims;
  const std::size_t n = d.points();
  if (n > cap) {
    throw std::length_error("dense oracle refused: " + std::to_string(n) + " unknowns exceeds the cap of " +
                            std::to_string(cap));
  }
  DenseMatrix m;
  m.n = n;
  m.a.assign(n * n, 0.0);
  for (int i = 0; i < d.x; ++i) {
    for (int j = 0; j < d.y; ++j) {
      for (int k = 0; k < d.z; ++k) {
        const std::size_t g = d.index(i, j, k);
        m.a[g * n + g] = 1.0;
        for (int c = 0; c < kCouplings; ++c) {
          if (!has_neighbor(d, i, j, k, c)) continue;
          const auto col = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(g) + coupling_offset(d, c));
          m.a[g * n + col] = sys.coefficient(c, g);
        }
      }
    }
  }
  return m;
}

namespace {

constexpr char kMagic[8] = {'W', 'S', 'E', 'S', 'T', 'E', 'N', '7'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("system container truncated");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

void put_field(std::ostream& out, const std::vector<double>& f) {
  std::vector<char> buf(f.size() * 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const std::uint16_t h = fp16::from_double(f[i]);
    buf[2 * i] = static_cast<char>(h & 0xff);
    buf[2 * i + 1] = static_cast<char>(h >> 8);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> get_field(std::istream& in, std::size_t n) {
  std::vector<unsigned char> buf(n * 2);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error("system container truncated");
  }
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = fp16::to_double(static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8)));
  }
  return f;
}

}  // namespace

void write_system(std::ostream& out, const StencilSystem& sys, Precision precision) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(sys.dims.x));
  put_u32(out, static_cast<std::uint32_t>(sys.dims.y));
  put_u32(out, static_cast<std::uint32_t>(sys.dims.z));
  put_u32(out, static_cast<std::uint32_t>(precision));
  for (const auto& c : sys.coeff) put_field(out, c);
  put_field(out, sys.rhs);
  if (!out) throw std::runtime_error("failed to write system container");
}

StencilSystem read_system(std::istream& in, Precision* precision) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error("not a stencil system container");
  }
  if (get_u32(in) != kVersion) throw std::runtime_error("unsupported system container version");
  StencilSystem sys;
  sys.dims.x = static_cast<int>(get_u32(in));
  sys.dims.y = static_cast<int>(get_u32(in));
  sys.dims.z = static_cast<int>(get_u32(in));
  const std::uint32_t p = get_u32(in);
  if (!sys.dims.valid() || p > 3) throw std::runtime_error("corrupt system container header");
  if (precision) *precision = static_cast<Precision>(p);
  for (auto& c : sys.coeff) c = get_field(in, sys.dims.points());
  sys.rhs = get_field(in, sys.dims.points());
  return sys;
}

std::vector<std::vector<double>> scatter(const Dims& d, const std::vector<double>& global) {
  if (global.size() != d.points()) throw std::invalid_argument("scatter: length mismatch");
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y));
  for (int i = 0; i < d.x; ++i) {
    for (int j = 0; j < d.y; ++j) {
      const auto first = global.begin() + static_cast<std::ptrdiff_t>(d.index(i, j, 0));
      cols[column_index(d, i, j)].assign(first, first + d.z);
    }
  }
  return cols;
}

std::vector<double> gather(const Dims& d, const std::vector<std::vector<double>>& columns) {
  if (columns.size() != static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y)) {
    throw std::invalid_argument("gather: column count mismatch");
  }
  std::vector<double> global(d.points());
  for (int i = 0; i < d.x; ++i) {
    for (int j = 0; j < d.y; ++j) {
      const auto& col = columns[column_index(d, i, j)];
      if (col.size() != static_cast<std::size_t>(d.z)) throw std::invalid_argument("gather: column length mismatch");
      std::copy(col.begin(), col.end(), global.begin() + static_cast<std::ptrdiff_t>(d.index(i, j, 0)));
    }
  }
  return global;
}

}  // namespace wse
