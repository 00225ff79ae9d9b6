#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace codexl::unicode {

// Decodes UTF-8 into scalar values. Throws DataError on malformed input.
std::vector<char32_t> decode_utf8(std::string_view text);
bool is_valid_utf8(std::string_view text);

void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(char32_t cp);

// Byte length of each scalar value, in order; concatenating the slices
// reproduces `text`.
std::vector<std::string> split_scalars(std::string_view text);

}  // namespace codexl::unicode
