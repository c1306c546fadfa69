#pragma once

#include <filesystem>
#include <string_view>

namespace nvfg {

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string format_double(double value);

}  // namespace nvfg
