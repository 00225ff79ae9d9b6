#pragma once

// Binary checkpoint container.
//
//   "CXLM"                      4 bytes
//   version                     u32
//   metadata length             u64, then that many bytes of UTF-8
//                               "key = value\n" lines
//   array count                 u32
//   per array (manifest order):
//     name length, name         u32, bytes
//     dtype                     u8: 4 = float32, 8 = float64
//     rank, extents             u32, u64 x rank
//     payload                   numel x dtype bytes, IEEE-754 little-endian
//   checksum                    u64 FNV-1a of every preceding byte
//
// All integers are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "codexl/tensor.hpp"

namespace codexl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
  std::string name;
  Shape shape;
  std::uint8_t dtype = 4;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  template <typename T>
  static CheckpointArray of(std::string name, Shape shape, std::span<const T> values);
  // Converts to T; float64 payloads narrow to float when T is float.
  template <typename T>
  std::vector<T> values() const;

  bool operator==(const CheckpointArray&) const = default;
};

struct CheckpointFile {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<CheckpointArray> arrays;

  void set(const std::string& key, std::string value);
  std::optional<std::string> find(std::string_view key) const;
  // Throws DataError when the key is absent.
  const std::string& get(std::string_view key) const;
  const CheckpointArray* array(std::string_view name) const;

  bool operator==(const CheckpointFile&) const = default;
};

std::string serialize_checkpoint(const CheckpointFile& file);
// Throws DataError on a bad magic, unsupported version, truncation or checksum mismatch.
CheckpointFile parse_checkpoint(std::string_view bytes);

// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

}  // namespace codexl
