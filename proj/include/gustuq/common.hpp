#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>

namespace gustuq {

using Rng = std::mt19937_64;

/// Stream seed for sub-task `index` of a run seeded with `master`
/// (splitmix64 finalizer over the pair).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
double uniform01(Rng& rng);

using WarningSink = std::function<void(std::string_view)>;

/// Replace the process-wide warning sink; returns the previous one.
/// The default sink writes "warning: <msg>" lines to stderr.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
/// Strict full-string parse; returns false on any trailing garbage.
bool parse_double(std::string_view text, double& out);

/// Write `content` to `path` through a sibling temporary and rename, so a
/// partially written file is never observable under `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace gustuq
