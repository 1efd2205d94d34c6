#pragma once

// Zip container holding manifest.json plus one raw little-endian float32 file
// per tensor (<key>.f32, row-major). Entries are stored uncompressed so rows
// can be read in place; timestamps are fixed so output is byte-deterministic.

#include <poseval/core.hpp>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace poseval {

inline constexpr int kArchiveFormatVersion = 1;

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t rows() const { return shape.empty() ? 0 : shape.front(); }
  /// Elements per leading-dimension row.
  std::int64_t row_size() const {
    return std::accumulate(shape.begin() + (shape.empty() ? 0 : 1), shape.end(), std::int64_t{1},
                           std::multiplies<>());
  }
  std::int64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
  }
  bool operator==(const Tensor&) const = default;
};

/// Manifest metadata plus named tensors. The manifest's "tensors" and
/// "format_version" fields are owned by the writer.
struct DatasetArchive {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  bool operator==(const DatasetArchive& o) const { return manifest == o.manifest && tensors == o.tensors; }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t crc(const void* data, std::size_t n, std::uint32_t seed = 0) {
  auto c = static_cast<uLong>(seed);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

inline std::string float_bytes(std::span<const float> values) {
  std::string out(values.size() * sizeof(float), '\0');
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto u = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) out[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  }
  return out;
}

inline void bytes_to_floats(const unsigned char* src, std::size_t count, float* dst) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i) dst[i] = std::bit_cast<float>(get_u32(src + 4 * i));
  }
}

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01

}  // namespace detail

/// Writes entries in insertion order; manifest.json is written last.
inline void write_archive(const std::string& path, const DatasetArchive& archive) {
  struct Entry {
    std::string name;
    std::uint32_t crc, size, offset;
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError(ArchiveError::Kind::io, "cannot open '" + path + "' for writing");

  std::vector<Entry> entries;
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const std::string& payload) {
    if (payload.size() > 0xffffffffu || offset > 0xffffffffu)
      throw ArchiveError(ArchiveError::Kind::io, "archive exceeds 4 GiB (zip64 unsupported)");
    Entry e{name, detail::crc(payload.data(), payload.size()), static_cast<std::uint32_t>(payload.size()),
            static_cast<std::uint32_t>(offset)};
    std::string h;
    detail::put_u32(h, detail::kLocalSig);
    detail::put_u16(h, 20);  // version needed
    detail::put_u16(h, 0);   // flags
    detail::put_u16(h, 0);   // stored
    detail::put_u16(h, 0);   // time
    detail::put_u16(h, detail::kDosDate);
    detail::put_u32(h, e.crc);
    detail::put_u32(h, e.size);
    detail::put_u32(h, e.size);
    detail::put_u16(h, static_cast<std::uint16_t>(name.size()));
    detail::put_u16(h, 0);
    h += name;
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    offset += h.size() + payload.size();
    entries.push_back(e);
  };

  nlohmann::json manifest = archive.manifest;
  manifest["format_version"] = kArchiveFormatVersion;
  nlohmann::json tensor_index = nlohmann::json::object();
  for (const auto& [key, t] : archive.tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != t.element_count())
      throw ArchiveError(ArchiveError::Kind::shape, "tensor '" + key + "' data does not match its shape");
    tensor_index[key] = {{"shape", t.shape}, {"dtype", "float32"}};
    add_entry(key + ".f32", detail::float_bytes(t.data));
  }
  manifest["tensors"] = tensor_index;
  add_entry("manifest.json", manifest.dump(1) + "\n");

  std::string central;
  for (const auto& e : entries) {
    detail::put_u32(central, detail::kCentralSig);
    detail::put_u16(central, 20);  // made by
    detail::put_u16(central, 20);  // needed
    detail::put_u16(central, 0);
    detail::put_u16(central, 0);
    detail::put_u16(central, 0);
    detail::put_u16(central, detail::kDosDate);
    detail::put_u32(central, e.crc);
    detail::put_u32(central, e.size);
    detail::put_u32(central, e.size);
    detail::put_u16(central, static_cast<std::uint16_t>(e.name.size()));
    detail::put_u16(central, 0);  // extra
    detail::put_u16(central, 0);  // comment
    detail::put_u16(central, 0);  // disk
    detail::put_u16(central, 0);  // internal attrs
    detail::put_u32(central, 0);  // external attrs
    detail::put_u32(central, e.offset);
    central += e.name;
  }
  std::string end;
  detail::put_u32(end, detail::kEndSig);
  detail::put_u16(end, 0);
  detail::put_u16(end, 0);
  detail::put_u16(end, static_cast<std::uint16_t>(entries.size()));
  detail::put_u16(end, static_cast<std::uint16_t>(entries.size()));
  detail::put_u32(end, static_cast<std::uint32_t>(central.size()));
  detail::put_u32(end, static_cast<std::uint32_t>(offset));
  detail::put_u16(end, 0);
  out.write(central.data(), static_cast<std::streamsize>(central.size()));
  out.write(end.data(), static_cast<std::streamsize>(end.size()));
  out.flush();
  if (!out) throw ArchiveError(ArchiveError::Kind::io, "write to '" + path + "' failed");
}

/// Random-access reader. Opening parses the directory and manifest only;
/// tensors are read on demand, whole or by row range. Reads use pread, so a
/// const reader may be shared between threads.
class ArchiveReader {
 public:
  struct EntryInfo {
    std::uint64_t data_offset = 0;
    std::uint32_t size = 0;
    std::uint32_t crc = 0;
  };

  explicit ArchiveReader(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw ArchiveError(ArchiveError::Kind::io, "cannot open '" + path + "'");
    try {
      load_directory();
      load_manifest();
    } catch (...) {
      ::close(fd_);
      throw;
    }
  }
  ArchiveReader(const ArchiveReader&) = delete;
  ArchiveReader& operator=(const ArchiveReader&) = delete;
  ~ArchiveReader() {
    if (fd_ >= 0) ::close(fd_);
  }

  const nlohmann::json& manifest() const { return manifest_; }
  const std::string& path() const { return path_; }

  bool has_tensor(const std::string& key) const { return shapes_.count(key) != 0; }

  const std::vector<std::int64_t>& shape(const std::string& key) const {
    auto it = shapes_.find(key);
    if (it == shapes_.end()) throw ArchiveError(ArchiveError::Kind::shape, "no tensor '" + key + "' in " + path_);
    return it->second;
  }

  std::vector<std::string> tensor_keys() const {
    std::vector<std::string> keys;
    for (const auto& [k, _] : shapes_) keys.push_back(k);
    return keys;
  }

  /// Whole tensor, CRC-verified.
  Tensor read_tensor(const std::string& key) const {
    Tensor t;
    t.shape = shape(key);
    const auto& e = entries_.at(key + ".f32");
    std::vector<unsigned char> raw(e.size);
    read_at(e.data_offset, raw.data(), raw.size());
    if (detail::crc(raw.data(), raw.size()) != e.crc)
      throw ArchiveError(ArchiveError::Kind::corrupt, "CRC mismatch in tensor '" + key + "' of " + path_);
    t.data.resize(raw.size() / sizeof(float));
    detail::bytes_to_floats(raw.data(), t.data.size(), t.data.data());
    return t;
  }

  /// Rows [begin, begin + count) of a tensor into `out`, which must hold
  /// count * row_size floats. Not CRC-checked (partial reads).
  void read_rows(const std::string& key, std::int64_t begin, std::int64_t count, float* out) const {
    const auto& s = shape(key);
    const std::int64_t rows = s.empty() ? 0 : s.front();
    if (begin < 0 || count < 0 || begin + count > rows)
      throw ArchiveError(ArchiveError::Kind::shape, "row range out of bounds for '" + key + "'");
    const std::int64_t row_size = std::accumulate(s.begin() + 1, s.end(), std::int64_t{1}, std::multiplies<>());
    const auto& e = entries_.at(key + ".f32");
    const std::size_t nbytes = static_cast<std::size_t>(count * row_size) * sizeof(float);
    const std::uint64_t off = e.data_offset + static_cast<std::uint64_t>(begin * row_size) * sizeof(float);
    if constexpr (std::endian::native == std::endian::little) {
      read_at(off, out, nbytes);
    } else {
      std::vector<unsigned char> raw(nbytes);
      read_at(off, raw.data(), nbytes);
      detail::bytes_to_floats(raw.data(), nbytes / sizeof(float), out);
    }
  }

  DatasetArchive read_all() const {
    DatasetArchive a;
    a.manifest = manifest_;
    a.manifest.erase("format_version");
    a.manifest.erase("tensors");
    for (const auto& [key, _] : shapes_) a.tensors[key] = read_tensor(key);
    return a;
  }

 private:
  void read_at(std::uint64_t offset, void* dst, std::size_t n) const {
    auto* p = static_cast<char*>(dst);
    while (n > 0) {
      const ssize_t got = ::pread(fd_, p, n, static_cast<off_t>(offset));
      if (got < 0) throw ArchiveError(ArchiveError::Kind::io, "read failed on " + path_);
      if (got == 0) throw ArchiveError(ArchiveError::Kind::corrupt, "unexpected end of file in " + path_);
      p += got;
      n -= static_cast<std::size_t>(got);
      offset += static_cast<std::uint64_t>(got);
    }
  }

  void load_directory() {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw ArchiveError(ArchiveError::Kind::io, "cannot stat " + path_);
    const auto file_size = static_cast<std::uint64_t>(st.st_size);
    if (file_size < 22) throw ArchiveError(ArchiveError::Kind::corrupt, path_ + " is truncated (no end record)");
    const std::uint64_t tail_len = std::min<std::uint64_t>(file_size, 22 + 0xffff);
    std::vector<unsigned char> tail(tail_len);
    read_at(file_size - tail_len, tail.data(), tail.size());
    std::int64_t pos = -1;
    for (std::int64_t i = static_cast<std::int64_t>(tail_len) - 22; i >= 0; --i) {
      if (detail::get_u32(&tail[static_cast<std::size_t>(i)]) == detail::kEndSig) {
        pos = i;
        break;
      }
    }
    if (pos < 0) throw ArchiveError(ArchiveError::Kind::corrupt, path_ + " is truncated or not a zip archive");
    const unsigned char* end = &tail[static_cast<std::size_t>(pos)];
    const std::uint64_t end_offset = file_size - tail_len + static_cast<std::uint64_t>(pos);
    const std::uint16_t count = detail::get_u16(end + 10);
    const std::uint32_t cd_size = detail::get_u32(end + 12);
    const std::uint32_t cd_offset = detail::get_u32(end + 16);
    if (static_cast<std::uint64_t>(cd_offset) + cd_size > end_offset)
      throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": central directory out of bounds");
    std::vector<unsigned char> cd(cd_size);
    read_at(cd_offset, cd.data(), cd.size());
    std::size_t p = 0;
    for (std::uint16_t i = 0; i < count; ++i) {
      if (p + 46 > cd.size() || detail::get_u32(&cd[p]) != detail::kCentralSig)
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": bad central directory entry");
      const std::uint16_t method = detail::get_u16(&cd[p + 10]);
      const std::uint32_t crc = detail::get_u32(&cd[p + 16]);
      const std::uint32_t csize = detail::get_u32(&cd[p + 20]);
      const std::uint32_t usize = detail::get_u32(&cd[p + 24]);
      const std::uint16_t name_len = detail::get_u16(&cd[p + 28]);
      const std::uint16_t extra_len = detail::get_u16(&cd[p + 30]);
      const std::uint16_t comment_len = detail::get_u16(&cd[p + 32]);
      const std::uint32_t local = detail::get_u32(&cd[p + 42]);
      if (p + 46 + name_len > cd.size())
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": bad central directory entry");
      std::string name(reinterpret_cast<const char*>(&cd[p + 46]), name_len);
      p += 46u + name_len + extra_len + comment_len;
      if (method != 0 || csize != usize)
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": entry '" + name + "' is compressed (unsupported)");
      unsigned char lh[30];
      if (static_cast<std::uint64_t>(local) + 30 > end_offset)
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": local header out of bounds");
      read_at(local, lh, sizeof lh);
      if (detail::get_u32(lh) != detail::kLocalSig)
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": bad local header for '" + name + "'");
      EntryInfo info;
      info.data_offset = local + 30u + detail::get_u16(lh + 26) + detail::get_u16(lh + 28);
      info.size = usize;
      info.crc = crc;
      if (info.data_offset + info.size > cd_offset)
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": entry '" + name + "' is truncated");
      entries_[name] = info;
    }
  }

  void load_manifest() {
    auto it = entries_.find("manifest.json");
    if (it == entries_.end()) throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": missing manifest.json");
    std::string text(it->second.size, '\0');
    read_at(it->second.data_offset, text.data(), text.size());
    if (detail::crc(text.data(), text.size()) != it->second.crc)
      throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": manifest CRC mismatch");
    try {
      manifest_ = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": manifest is not valid JSON: " + e.what());
    }
    if (!manifest_.contains("format_version") || !manifest_["format_version"].is_number_integer())
      throw ArchiveError(ArchiveError::Kind::version, path_ + ": manifest lacks format_version");
    const int version = manifest_["format_version"].get<int>();
    if (version != kArchiveFormatVersion)
      throw ArchiveError(ArchiveError::Kind::version,
                         path_ + ": format_version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kArchiveFormatVersion) + ")");
    if (!manifest_.contains("tensors") || !manifest_["tensors"].is_object())
      throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": manifest lacks tensor index");
    for (const auto& [key, info] : manifest_["tensors"].items()) {
      std::vector<std::int64_t> s;
      try {
        s = info.at("shape").get<std::vector<std::int64_t>>();
        if (info.value("dtype", std::string("float32")) != "float32")
          throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": tensor '" + key + "' is not float32");
      } catch (const nlohmann::json::exception&) {
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": bad tensor index entry '" + key + "'");
      }
      auto e = entries_.find(key + ".f32");
      if (e == entries_.end())
        throw ArchiveError(ArchiveError::Kind::corrupt, path_ + ": tensor file '" + key + ".f32' missing");
      const std::int64_t n = std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
      if (s.empty() || n < 0 || static_cast<std::uint64_t>(n) * sizeof(float) != e->second.size)
        throw ArchiveError(ArchiveError::Kind::shape,
                           path_ + ": tensor '" + key + "' has " + std::to_string(e->second.size) +
                               " bytes, manifest shape implies " + std::to_string(n * 4));
      shapes_[key] = std::move(s);
    }
  }

  std::string path_;
  int fd_ = -1;
  std::map<std::string, EntryInfo> entries_;
  std::map<std::string, std::vector<std::int64_t>> shapes_;
  nlohmann::json manifest_;
};

inline DatasetArchive read_archive(const std::string& path) { return ArchiveReader(path).read_all(); }

}  // namespace poseval
