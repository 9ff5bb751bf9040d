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
 * @file scalar.hpp
 * @brief Bit-accurate binary16 / binary32 / binary64 arithmetic in the four
 *        precision modes of the tile datapath.
 *
 * All roundings are round-to-nearest-even. binary16 subnormals are kept.
 *
 * Two layers are provided:
 *  - ScalarValue: a tagged raw bit pattern, for tests and I/O.
 *  - wse::arith: the hot path used by kernels. Values travel as `double`
 *    holding a number that is exactly representable in its format; each
 *    operation returns the correctly rounded result in the mode's width.
 */
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>

namespace wse {

enum class Format : std::uint8_t { Binary16, Binary32, Binary64 };

enum class Precision : std::uint8_t { Half, Mixed, Single, OracleDouble };

/// Width of a multiplication operand.
constexpr Format operand_format(Precision m) {
  switch (m) {
    case Precision::Half:
    case Precision::Mixed: return Format::Binary16;
    case Precision::Single: return Format::Binary32;
    case Precision::OracleDouble: return Format::Binary64;
  }
  return Format::Binary64;
}

/// Width in which sums (and fused multiply-adds) are rounded.
constexpr Format accumulate_format(Precision m) {
  switch (m) {
    case Precision::Half: return Format::Binary16;
    case Precision::Mixed:
    case Precision::Single: return Format::Binary32;
    case Precision::OracleDouble: return Format::Binary64;
  }
  return Format::Binary64;
}

/// Width of a plain product. Mixed products of two binary16 numbers are exact
/// in binary32, so they are held there without loss.
constexpr Format product_format(Precision m) { return m == Precision::Half ? Format::Binary16 : accumulate_format(m); }

/// Width of distributed vectors held in tile memory.
constexpr Format storage_format(Precision m) { return operand_format(m); }

/// Width of the solver's iteration scalars and of AllReduce payloads.
constexpr Format scalar_format(Precision m) {
  return m == Precision::OracleDouble ? Format::Binary64 : Format::Binary32;
}

/// Number of 16-bit memory words one element occupies.
constexpr int format_words(Format f) {
  switch (f) {
    case Format::Binary16: return 1;
    case Format::Binary32: return 2;
    case Format::Binary64: return 4;
  }
  return 4;
}

/// Unit roundoff 2^-p of a format (p = significand bits).
constexpr double unit_roundoff(Format f) {
  switch (f) {
    case Format::Binary16: return 1.0 / 2048.0;          // 2^-11
    case Format::Binary32: return 1.0 / 16777216.0;      // 2^-24
    case Format::Binary64: return 1.1102230246251565e-16;  // 2^-53
  }
  return 0.0;
}

std::string_view to_string(Precision m);
std::string_view to_string(Format f);
std::optional<Precision> parse_precision(std::string_view s);

namespace fp16 {

inline constexpr std::uint16_t kPosInf = 0x7c00;
inline constexpr std::uint16_t kNegInf = 0xfc00;
inline constexpr std::uint16_t kQuietNaN = 0x7e00;
inline constexpr double kMax = 65504.0;

/// Correctly rounded narrowing from binary64.
std::uint16_t from_double(double x);
/// Exact widening.
double to_double(std::uint16_t h);

/// from_double then to_double without leaving binary64.
inline double round_value(double x) {
  constexpr std::uint64_t kSignBit = 0x8000000000000000ull;
  constexpr std::uint64_t kExpMask = 0x7ff0000000000000ull;
  constexpr std::uint64_t kMinNormal = 0x3f10000000000000ull;  // 2^-14
  constexpr std::uint64_t kMaxFinite = 0x40effc0000000000ull;  // 65504
  const std::uint64_t b = std::bit_cast<std::uint64_t>(x);
  const std::uint64_t mag = b & ~kSignBit;
  if (mag >= kExpMask) return x;
  if (mag < kMinNormal) {
    // fixed 2^-24 grid; the magic constant makes the add round to an integer
    constexpr double kMagic = 0x1.8p52;
    const double q = ((x * 0x1p24 + kMagic) - kMagic) * 0x1p-24;
    return std::copysign(q, x);
  }
  constexpr std::uint64_t kDrop = (std::uint64_t{1} << 42) - 1;
  std::uint64_t r = mag + (kDrop >> 1) + ((mag >> 42) & 1);
  r &= ~kDrop;
  if (r > kMaxFinite) r = kExpMask;
  return std::bit_cast<double>(r | (b & kSignBit));
}

constexpr bool is_nan(std::uint16_t h) { return (h & 0x7c00) == 0x7c00 && (h & 0x03ff) != 0; }
constexpr bool is_finite(std::uint16_t h) { return (h & 0x7c00) != 0x7c00; }

}  // namespace fp16

/// Round a binary64 value to the nearest value of format `f`, returned as a
/// binary64 number.
inline double round_to(Format f, double x) {
  switch (f) {
    case Format::Binary16: return fp16::round_value(x);
    case Format::Binary32: return static_cast<double>(static_cast<float>(x));
    case Format::Binary64: return x;
  }
  return x;
}

/// a + b rounded to odd at binary64. Rounding the result once more to any
/// format with at least two fewer significand bits gives the correctly
/// rounded exact sum.
double round_odd_sum(double a, double b);

/// True if `x` is exactly representable in `f` (NaN counts as representable).
bool representable(Format f, double x);

/// Tagged raw bit pattern.
struct ScalarValue {
  Format format = Format::Binary32;
  std::uint64_t bits = 0;

  /// Rounds `x` into `f`.
  static ScalarValue from_double(Format f, double x);
  static ScalarValue half(double x) { return from_double(Format::Binary16, x); }
  static ScalarValue single(double x) { return from_double(Format::Binary32, x); }
  static ScalarValue dbl(double x) { return from_double(Format::Binary64, x); }

  double value() const;
  bool is_nan() const;

  friend bool operator==(const ScalarValue&, const ScalarValue&) = default;
};

/// IEEE sum rounded at the mode's accumulation width. Operands must be
/// representable in that width; narrower operands are widened exactly.
ScalarValue add(ScalarValue a, ScalarValue b, Precision mode);
/// Product rounded at product_format(mode). Operands at operand width.
ScalarValue mul(ScalarValue a, ScalarValue b, Precision mode);
/// acc + a*b with the product unrounded and one final rounding.
ScalarValue fmac(ScalarValue acc, ScalarValue a, ScalarValue b, Precision mode);
/// Correctly rounded narrowing or exact widening.
ScalarValue convert(ScalarValue v, Format to);
ScalarValue convert(ScalarValue v, Precision to);

namespace arith {

inline double add(double a, double b, Precision m) {
  // Two binary16 or binary32 operands: the binary64 sum rounded once more is
  // correctly rounded (at least 2p+2 bits of headroom).
  return m == Precision::OracleDouble ? a + b : round_to(accumulate_format(m), a + b);
}

inline double mul(double a, double b, Precision m) {
  return m == Precision::OracleDouble ? a * b : round_to(product_format(m), a * b);
}

/// Operands at operand width, accumulator at accumulation width.
double fmac(double acc, double a, double b, Precision m);

}  // namespace arith

}  // namespace wse
