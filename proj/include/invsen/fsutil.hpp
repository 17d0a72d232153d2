#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace invsen {

/// Write `contents` to a temporary file next to `path`, then rename it into
/// place. On failure nothing is left at `path` and the temporary is removed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace invsen
