#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace codexl {

// Throws DataError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over `path`, so readers never
// observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace codexl
