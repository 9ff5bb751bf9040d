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
 * @file cli.hpp
 * @brief The `wse` command-line tool.
 *
 * Subcommands: solve, spmv-check, allreduce-trace, perf, mem-check. Errors
 * are one line on the error stream: `error: kind=<kind> message=<text>`.
 */
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wse::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitInfeasible = 2,
  kExitBreakdown = 3,  // breakdown or divergence
  kExitCheckFailed = 4,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wse::cli
