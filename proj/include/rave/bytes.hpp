#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "rave/error.hpp"

namespace rave {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

static_assert(std::endian::native == std::endian::little, "rave assumes a little-endian host");

// Little-endian append-only writer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto at = buf_.size();
    buf_.resize(at + sizeof(T));
    std::memcpy(buf_.data() + at, &value, sizeof(T));
  }

  void put_bytes(ByteView bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void pad_to(std::size_t n, std::uint8_t fill = 0) {
    if (buf_.size() < n) buf_.resize(n, fill);
  }

  template <typename T>
  void patch(std::size_t at, T value) {
    std::memcpy(buf_.data() + at, &value, sizeof(T));
  }

  [[nodiscard]] std::size_t size() const noexcept { return buf_.size(); }
  [[nodiscard]] const Bytes& bytes() const noexcept { return buf_; }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

// Bounds-checked little-endian reader. Overruns raise `overrun_code`.
class ByteReader {
 public:
  explicit ByteReader(ByteView data, Errc overrun_code = Errc::TruncatedPayload)
      : data_(data), overrun_(overrun_code) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    require(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  ByteView take(std::size_t n) {
    require(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void skip(std::size_t n) { take(n); }
  void seek(std::size_t pos) {
    if (pos > data_.size()) fail(overrun_, "seek past end of buffer");
    pos_ = pos;
  }

  [[nodiscard]] std::size_t pos() const noexcept { return pos_; }
  [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }
  [[nodiscard]] bool at_end() const noexcept { return pos_ >= data_.size(); }

 private:
  void require(std::size_t n) const {
    if (n > data_.size() - pos_)
      fail(overrun_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                         ", have " + std::to_string(data_.size() - pos_));
  }

  ByteView data_;
  std::size_t pos_ = 0;
  Errc overrun_;
};

// Standard reflected CRC-32 (polynomial 0xEDB88320), as computed by zlib.
inline std::uint32_t crc32(ByteView data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t at = 0; at < data.size(); at += kChunk) {
    const auto n = std::min(kChunk, data.size() - at);
    crc = ::crc32(crc, data.data() + at, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes out(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size)))
    fail(Errc::IoError, "short read on " + path.string());
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  auto b = read_file(path);
  return {b.begin(), b.end()};
}

// Writes to a sibling temp file and renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, ByteView data) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) fail(Errc::IoError, "write failed on " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Deterministic hashing used for every seeded decision (tie-breaks, sampling,
// shuffles). Fixed algorithms so results do not depend on the standard library.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t seeded_key(std::uint64_t seed, std::string_view id) noexcept {
  return splitmix64(splitmix64(seed) ^ fnv1a64(id));
}

// Small deterministic generator (SplitMix64 stream).
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do r = next();
    while (r >= limit);
    return r % bound;
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

template <typename T>
void seeded_shuffle(std::span<T> items, SplitMix& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace rave
