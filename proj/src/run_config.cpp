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

#include "wse/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wse {

std::string_view to_string(SamplerChoice s) {
  switch (s) {
    case SamplerChoice::Dominant: return "dominant";
    case SamplerChoice::ConvectionDiffusion: return "convection-diffusion";
    case SamplerChoice::Zero: return "zero";
  }
  return "?";
}

std::optional<SamplerChoice> parse_sampler(std::string_view s) {
  if (s == "dominant") return SamplerChoice::Dominant;
  if (s == "convection-diffusion" || s == "cd") return SamplerChoice::ConvectionDiffusion;
  if (s == "zero") return SamplerChoice::Zero;
  return std::nullopt;
}

std::string to_string(const Schedule& s) {
  if (s.kind == Schedule::Kind::Deterministic) return "deterministic";
  return "seeded:" + std::to_string(s.seed);
}

namespace {

template <class T>
std::optional<T> parse_int(std::string_view s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(std::string_view s) {
  // from_chars for double needs a newer libstdc++ than some toolchains ship
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

std::optional<bool> parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  return std::nullopt;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad(std::string_view key, std::string_view value) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

}  // namespace

std::optional<Schedule> parse_schedule(std::string_view s) {
  if (s == "deterministic") return Schedule::deterministic();
  constexpr std::string_view prefix = "seeded:";
  if (s.substr(0, prefix.size()) == prefix) {
    if (auto v = parse_int<std::uint64_t>(s.substr(prefix.size()))) return Schedule::seeded(*v);
  }
  return std::nullopt;
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  if (key == "subcommand") {
    c.subcommand = value;
  } else if (key == "dims") {
    c.dims = value;
  } else if (key == "mode") {
    const auto m = parse_precision(value);
    if (!m) bad(key, value);
    c.mode = *m;
  } else if (key == "max_iters") {
    const auto v = parse_int<int>(value);
    if (!v || *v < 0) bad(key, value);
    c.max_iters = *v;
  } else if (key == "tol") {
    const auto v = parse_double(value);
    if (!v || !(*v >= 0.0)) bad(key, value);
    c.tol = *v;
  } else if (key == "schedule") {
    const auto s = parse_schedule(value);
    if (!s) bad(key, value);
    c.schedule = *s;
  } else if (key == "problem_seed") {
    const auto v = parse_int<std::uint64_t>(value);
    if (!v) bad(key, value);
    c.problem_seed = *v;
  } else if (key == "sampler") {
    const auto s = parse_sampler(value);
    if (!s) bad(key, value);
    c.sampler = *s;
  } else if (key == "clock_hz") {
    const auto v = parse_double(value);
    if (!v || !(*v > 0.0)) bad(key, value);
    c.clock_hz = *v;
  } else if (key == "fused_reduce" || key == "parallel") {
    const auto v = parse_bool(value);
    if (!v) bad(key, value);
    (key == "parallel" ? c.parallel : c.fused_reduce) = *v;
  } else if (key == "input") {
    c.input = value;
  } else if (key == "csv") {
    c.csv = value;
  } else if (key == "trace") {
    c.trace = value;
  } else if (key == "table") {
    c.table = value;
  } else if (key == "oracle_cap") {
    const auto v = parse_int<std::size_t>(value);
    if (!v) bad(key, value);
    c.oracle_cap = *v;
  } else if (key == "nz") {
    const auto v = parse_int<long long>(value);
    if (!v || *v < 0) bad(key, value);
    c.nz = *v;
  } else if (key == "simple_iters") {
    const auto v = parse_int<int>(value);
    if (!v || *v < 0) bad(key, value);
    c.simple_iters = *v;
  } else if (key == "fit_seconds") {
    const auto v = parse_double(value);
    if (!v || !(*v >= 0.0)) bad(key, value);
    c.fit_seconds = *v;
  } else {
    throw ConfigError("unknown key '" + std::string(key) + "'");
  }
}

std::string serialize(const RunConfig& c) {
  std::ostringstream o;
  o << "subcommand = " << c.subcommand << '\n'
    << "dims = " << c.dims << '\n'
    << "mode = " << to_string(c.mode) << '\n'
    << "max_iters = " << c.max_iters << '\n'
    << "tol = " << exact(c.tol) << '\n'
    << "schedule = " << to_string(c.schedule) << '\n'
    << "problem_seed = " << c.problem_seed << '\n'
    << "sampler = " << to_string(c.sampler) << '\n'
    << "clock_hz = " << exact(c.clock_hz) << '\n'
    << "fused_reduce = " << (c.fused_reduce ? "true" : "false") << '\n'
    << "parallel = " << (c.parallel ? "true" : "false") << '\n'
    << "input = " << c.input << '\n'
    << "csv = " << c.csv << '\n'
    << "trace = " << c.trace << '\n'
    << "table = " << c.table << '\n'
    << "oracle_cap = " << c.oracle_cap << '\n'
    << "nz = " << c.nz << '\n'
    << "simple_iters = " << c.simple_iters << '\n'
    << "fit_seconds = " << exact(c.fit_seconds) << '\n';
  return o.str();
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  int lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace wse
