// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace reduxpll {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

/// Whole file as bytes; IoError when unreadable.
std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes (truncate + write); IoError on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace reduxpll
