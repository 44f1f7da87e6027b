#pragma once

// Experiment runner behind the polylab executable.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace polylab::cli {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitRejected = 2;
inline constexpr int kExitCheckFailed = 3;

/// args excludes the program name. Writes data.jsonl, summary.csv and
/// manifest.json into the output directory and returns the exit code.
int run_experiment(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace polylab::cli
