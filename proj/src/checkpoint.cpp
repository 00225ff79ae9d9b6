#include "codexl/checkpoint.hpp"

#include <bit>
#include <type_traits>

#include "codexl/errors.hpp"
#include "codexl/hash.hpp"
#include "codexl/io.hpp"

namespace codexl {

namespace {

constexpr std::string_view kMagic = "CXLM";

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw DataError(std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
  U le(const char* what) {
    const auto s = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return static_cast<std::uint8_t>(sizeof(T));
}

}  // namespace

template <typename T>
CheckpointArray CheckpointArray::of(std::string name, Shape shape, std::span<const T> values) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("array '" + name + "' has " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  CheckpointArray a;
  a.name = std::move(name);
  a.shape = std::move(shape);
  a.dtype = dtype_code<T>();
  a.bytes.reserve(values.size() * sizeof(T));
  for (T v : values) {
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) a.bytes.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
  }
  return a;
}

template <typename T>
std::vector<T> CheckpointArray::values() const {
  const auto n = shape_numel(shape);
  if (bytes.size() != n * dtype) throw DataError("array '" + name + "' payload size mismatch");
  std::vector<T> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto* p = bytes.data() + k * dtype;
    if (dtype == 4) {
      std::uint32_t bits = 0;
      for (std::size_t i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
      out[k] = static_cast<T>(std::bit_cast<float>(bits));
    } else if (dtype == 8) {
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
      out[k] = static_cast<T>(std::bit_cast<double>(bits));
    } else {
      throw DataError("array '" + name + "' has unknown dtype " + std::to_string(dtype));
    }
  }
  return out;
}

void CheckpointFile::set(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos || key.front() == ' ' || key.back() == ' ') {
    throw ConfigError("invalid checkpoint metadata key '" + key + "'");
  }
  if (value.find('\n') != std::string::npos) throw ConfigError("metadata value for '" + key + "' contains a newline");
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata.emplace_back(key, std::move(value));
}

std::optional<std::string> CheckpointFile::find(std::string_view key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& CheckpointFile::get(std::string_view key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  throw DataError("checkpoint is missing metadata key '" + std::string(key) + "'");
}

const CheckpointArray* CheckpointFile::array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::string serialize_checkpoint(const CheckpointFile& file) {
  std::string meta;
  for (const auto& [k, v] : file.metadata) meta += k + " = " + v + "\n";
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, meta.size());
  out += meta;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& a : file.arrays) {
    if (a.dtype != 4 && a.dtype != 8) throw DataError("array '" + a.name + "' has unknown dtype");
    if (a.bytes.size() != shape_numel(a.shape) * a.dtype) throw DataError("array '" + a.name + "' payload size mismatch");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(a.bytes.data()), a.bytes.size());
  }
  put_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

CheckpointFile parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw DataError("not a checkpoint: bad magic bytes");
  }
  r.take(kMagic.size(), "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointFile file;
  const auto meta_len = r.le<std::uint64_t>("metadata length");
  const auto meta = r.take(meta_len, "metadata");
  std::size_t start = 0;
  while (start < meta.size()) {
    const auto end = meta.find('\n', start);
    if (end == std::string_view::npos) throw DataError("checkpoint metadata is not newline-terminated");
    const auto line = meta.substr(start, end - start);
    const auto eq = line.find(" = ");
    if (eq == std::string_view::npos) throw DataError("malformed checkpoint metadata line '" + std::string(line) + "'");
    file.metadata.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 3)));
    start = end + 1;
  }
  const auto count = r.le<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointArray a;
    const auto name_len = r.le<std::uint32_t>("array name length");
    a.name = std::string(r.take(name_len, "array name"));
    a.dtype = r.le<std::uint8_t>("array dtype");
    if (a.dtype != 4 && a.dtype != 8) throw DataError("array '" + a.name + "' has unknown dtype");
    const auto rank = r.le<std::uint32_t>("array rank");
    if (rank > 16) throw DataError("array '" + a.name + "' has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.le<std::uint64_t>("array extent"));
    const auto numel = shape_numel(a.shape);
    if (numel > bytes.size()) throw DataError("checkpoint truncated in array '" + a.name + "'");
    const auto payload = r.take(numel * a.dtype, "array payload");
    a.bytes.assign(payload.begin(), payload.end());
    file.arrays.push_back(std::move(a));
  }
  const auto body_end = r.pos();
  const auto checksum = r.le<std::uint64_t>("checksum");
  if (checksum != fnv1a64(bytes.substr(0, body_end))) throw DataError("checkpoint checksum mismatch");
  if (r.pos() != bytes.size()) throw DataError("trailing bytes after checkpoint");
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  write_file_atomic(path, serialize_checkpoint(file));
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template CheckpointArray CheckpointArray::of<float>(std::string, Shape, std::span<const float>);
template CheckpointArray CheckpointArray::of<double>(std::string, Shape, std::span<const double>);
template std::vector<float> CheckpointArray::values<float>() const;
template std::vector<double> CheckpointArray::values<double>() const;

}  // namespace codexl
