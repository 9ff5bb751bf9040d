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

#include "wse/scalar.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wse {

std::string_view to_string(Precision m) {
  switch (m) {
    case Precision::Half: return "half";
    case Precision::Mixed: return "mixed";
    case Precision::Single: return "single";
    case Precision::OracleDouble: return "double";
  }
  return "?";
}

std::string_view to_string(Format f) {
  switch (f) {
    case Format::Binary16: return "fp16";
    case Format::Binary32: return "fp32";
    case Format::Binary64: return "fp64";
  }
  return "?";
}

std::optional<Precision> parse_precision(std::string_view s) {
  if (s == "half" || s == "fp16") return Precision::Half;
  if (s == "mixed") return Precision::Mixed;
  if (s == "single" || s == "fp32") return Precision::Single;
  if (s == "double" || s == "fp64" || s == "oracle") return Precision::OracleDouble;
  return std::nullopt;
}

namespace fp16 {

std::uint16_t from_double(double x) {
  const auto b = std::bit_cast<std::uint64_t>(x);
  const auto sign = static_cast<std::uint16_t>((b >> 48) & 0x8000);
  const auto biased = static_cast<int>((b >> 52) & 0x7ff);
  const std::uint64_t man = b & ((std::uint64_t{1} << 52) - 1);

  if (biased == 0x7ff) {
    if (man == 0) return sign | kPosInf;
    // quiet NaN, keep the top payload bits
    return static_cast<std::uint16_t>(sign | 0x7e00 | (man >> 42));
  }
  // binary64 subnormals are far below half the smallest binary16 subnormal
  if (biased == 0) return sign;

  int e = biased - 1023;
  const std::uint64_t sig = man | (std::uint64_t{1} << 52);

  if (e > 15) return sign | kPosInf;

  int shift;             // bits of `sig` discarded
  std::uint16_t expo;    // biased binary16 exponent for the normal case
  if (e >= -14) {
    shift = 42;
    expo = static_cast<std::uint16_t>(e + 15);
  } else {
    // subnormal target grid is 2^-24; value = sig * 2^(e-52)
    if (e < -25) return sign;  // below 2^-25, rounds to zero
    shift = 28 - e;            // 42 < shift <= 53
    expo = 0;
  }

  std::uint64_t keep = sig >> shift;
  const std::uint64_t rem = sig & ((std::uint64_t{1} << shift) - 1);
  const std::uint64_t halfway = std::uint64_t{1} << (shift - 1);
  if (rem > halfway || (rem == halfway && (keep & 1))) ++keep;

  if (expo == 0) {
    // keep in [0, 1024]; 1024 encodes the smallest normal directly
    return static_cast<std::uint16_t>(sign | keep);
  }
  // keep includes the implicit bit: [1024, 2048]
  if (keep == 2048) {
    keep = 1024;
    ++expo;
  }
  if (expo >= 31) return sign | kPosInf;
  return static_cast<std::uint16_t>(sign | (expo << 10) | (keep & 0x3ff));
}

double to_double(std::uint16_t h) {
  const std::uint64_t sign = std::uint64_t{h & 0x8000u} << 48;
  const int expo = (h >> 10) & 0x1f;
  const std::uint64_t frac = h & 0x3ff;
  if (expo == 0) {
    const double v = static_cast<double>(frac) * 0x1p-24;
    return std::bit_cast<double>(std::bit_cast<std::uint64_t>(v) | sign);
  }
  if (expo == 31) {
    const std::uint64_t payload = frac ? (std::uint64_t{1} << 51) | (frac << 42) : 0;
    return std::bit_cast<double>(sign | 0x7ff0000000000000ull | payload);
  }
  return std::bit_cast<double>(sign | (static_cast<std::uint64_t>(expo - 15 + 1023) << 52) | (frac << 42));
}

}  // namespace fp16

double round_odd_sum(double a, double b) {
  double s = a + b;
  if (!std::isfinite(s)) return s;
  const double bb = s - a;
  const double err = (a - (s - bb)) + (b - bb);
  if (err != 0.0 && (std::bit_cast<std::uint64_t>(s) & 1) == 0) {
    s = std::nextafter(s, err > 0 ? std::numeric_limits<double>::infinity()
                                  : -std::numeric_limits<double>::infinity());
  }
  return s;
}

bool representable(Format f, double x) {
  if (std::isnan(x)) return true;
  return round_to(f, x) == x;
}

ScalarValue ScalarValue::from_double(Format f, double x) {
  switch (f) {
    case Format::Binary16: return {f, fp16::from_double(x)};
    case Format::Binary32: return {f, std::bit_cast<std::uint32_t>(static_cast<float>(x))};
    case Format::Binary64: return {f, std::bit_cast<std::uint64_t>(x)};
  }
  return {};
}

double ScalarValue::value() const {
  switch (format) {
    case Format::Binary16: return fp16::to_double(static_cast<std::uint16_t>(bits));
    case Format::Binary32: return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
    case Format::Binary64: return std::bit_cast<double>(bits);
  }
  return 0.0;
}

bool ScalarValue::is_nan() const { return std::isnan(value()); }

namespace {

int width_rank(Format f) { return static_cast<int>(f); }

/// Widen `v` to `f`; narrowing a value is a precondition violation.
double operand(ScalarValue v, Format f, const char* what) {
  if (width_rank(v.format) > width_rank(f)) {
    throw std::invalid_argument(std::string("operand wider than ") + std::string(to_string(f)) + " in " + what);
  }
  return v.value();
}

}  // namespace

ScalarValue add(ScalarValue a, ScalarValue b, Precision mode) {
  const Format acc = accumulate_format(mode);
  const double r = arith::add(operand(a, acc, "add"), operand(b, acc, "add"), mode);
  return ScalarValue::from_double(acc, r);
}

ScalarValue mul(ScalarValue a, ScalarValue b, Precision mode) {
  const Format op = operand_format(mode);
  const double r = arith::mul(operand(a, op, "mul"), operand(b, op, "mul"), mode);
  return ScalarValue::from_double(product_format(mode), r);
}

ScalarValue fmac(ScalarValue acc, ScalarValue a, ScalarValue b, Precision mode) {
  const Format op = operand_format(mode);
  const Format af = accumulate_format(mode);
  const double r = arith::fmac(operand(acc, af, "fmac"), operand(a, op, "fmac"), operand(b, op, "fmac"), mode);
  return ScalarValue::from_double(af, r);
}

ScalarValue convert(ScalarValue v, Format to) { return ScalarValue::from_double(to, v.value()); }

ScalarValue convert(ScalarValue v, Precision to) { return convert(v, storage_format(to)); }

namespace arith {

double fmac(double acc, double a, double b, Precision m) {
  if (m == Precision::OracleDouble) return std::fma(a, b, acc);
  // binary16 and binary32 products are exact in binary64
  const double p = a * b;
  return round_to(accumulate_format(m), round_odd_sum(acc, p));
}

}  // namespace arith

}  // namespace wse
