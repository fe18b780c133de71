// Copyright 2026 The m3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace m3d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

using EnvLookup = std::function<std::optional<std::string>(const char* name)>;

/// Process environment.
std::optional<std::string> system_env(const char* name);

/// Entry point behind the `m3d` binary. `args` excludes the program name.
/// Returns the process exit code: 0 success, 1 pipeline or input failure,
/// 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env = system_env);

}  // namespace m3d::cli
