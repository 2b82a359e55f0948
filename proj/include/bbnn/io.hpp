#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace bbnn {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

/// Strict full-string parse; throws std::invalid_argument on garbage.
double parse_double(std::string_view s);

/// Writes via a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace bbnn
