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
 * @file run_config.hpp
 * @brief Run configuration for the command-line tool and its flat
 *        `key = value` text form.
 *
 * Keys: subcommand, dims, mode, max_iters, tol, schedule, problem_seed,
 * sampler, clock_hz, fused_reduce, parallel, input, csv, trace, table,
 * oracle_cap, nz, simple_iters, fit_seconds. Blank lines and lines starting with '#' are ignored.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "wse/fabric.hpp"
#include "wse/scalar.hpp"

namespace wse {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SamplerChoice : std::uint8_t { Dominant, ConvectionDiffusion, Zero };
std::string_view to_string(SamplerChoice s);
std::optional<SamplerChoice> parse_sampler(std::string_view s);

/// "deterministic" or "seeded:<u64>".
std::string to_string(const Schedule& s);
std::optional<Schedule> parse_schedule(std::string_view s);

struct RunConfig {
  std::string subcommand = "solve";
  std::string dims = "8x8x16";
  Precision mode = Precision::Mixed;
  int max_iters = 100;
  double tol = 1e-6;
  Schedule schedule;
  std::uint64_t problem_seed = 1;
  SamplerChoice sampler = SamplerChoice::Dominant;
  double clock_hz = 1e9;
  bool fused_reduce = false;
  bool parallel = false;
  std::string input;  // system file; overrides dims and sampler
  std::string csv;
  std::string trace;
  std::string table;
  std::size_t oracle_cap = 4096;
  long long nz = 0;         // mem-check column length; 0 takes Z from dims
  int simple_iters = 0;     // perf: SIMPLE rate estimate when positive
  double fit_seconds = 0.0;  // perf: fit the clock to this iteration time

  friend bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.subcommand == b.subcommand && a.dims == b.dims && a.mode == b.mode && a.max_iters == b.max_iters &&
           a.tol == b.tol && a.schedule.kind == b.schedule.kind && a.schedule.seed == b.schedule.seed &&
           a.problem_seed == b.problem_seed && a.sampler == b.sampler && a.clock_hz == b.clock_hz &&
           a.fused_reduce == b.fused_reduce && a.parallel == b.parallel && a.input == b.input && a.csv == b.csv &&
           a.trace == b.trace && a.table == b.table && a.oracle_cap == b.oracle_cap && a.nz == b.nz &&
           a.simple_iters == b.simple_iters && a.fit_seconds == b.fit_seconds;
  }
};

/// Every key, one per line, in a fixed order.
std::string serialize(const RunConfig& c);

/// Apply the keys present in `text` on top of `base`. Throws ConfigError
/// naming the line for unknown keys or bad values.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

/// Set one key from its text form; shared by the file parser and the CLI.
void apply_setting(RunConfig& c, std::string_view key, std::string_view value);

}  // namespace wse
