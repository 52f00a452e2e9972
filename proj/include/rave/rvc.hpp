#pragma once

// RVC1 volume container.
//
// Byte layout (all little-endian):
//   0   char[4]  magic "RVC1"
//   4   u16      version (1)
//   6   u16      flags (bit 0: payload is a token grid)
//   8   u8       dtype  0=i16 1=u16 2=f32
//   9   u8       codec  0=raw 1=deflate 2=delta-deflate 3=external
//   10  u32[3]   dims x, y, z
//   22  f32[3]   spacing (mm)
//   34  f32      rescale slope
//   38  f32      rescale intercept
//   42  f32[9]   orientation, column-major (x axis, y axis, z axis)
//   78  u32      meta_len
//   82  u8[meta_len]  UTF-8 JSON metadata
//   ..  {u64 offset, u64 length}[z]  slice table; offsets relative to payload start
//   ..  payload
//   ..  u32      CRC-32 over every preceding byte
//
// Delta-deflate stores slice 0 as-is and slice k as the element-wise
// difference from slice k-1 (modulo 2^16), each slice deflated on its own.

#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "rave/bytes.hpp"
#include "rave/error.hpp"
#include "rave/tokens.hpp"
#include "rave/volume.hpp"

namespace rave {

enum class Codec : std::uint8_t { Raw = 0, Deflate = 1, DeltaDeflate = 2, External = 3 };

constexpr std::string_view codec_name(Codec c) {
  switch (c) {
    case Codec::Raw: return "raw";
    case Codec::Deflate: return "deflate";
    case Codec::DeltaDeflate: return "delta-deflate";
    case Codec::External: return "hevc-external";
  }
  return "raw";
}

inline std::optional<Codec> parse_codec(std::string_view s) {
  for (auto c : {Codec::Raw, Codec::Deflate, Codec::DeltaDeflate, Codec::External})
    if (codec_name(c) == s) return c;
  if (s == "external" || s == "hevc") return Codec::External;
  return std::nullopt;
}

/// Slice-stream codec supplied from outside the library (e.g. an HEVC
/// encoder). Slices are handed over in the container dtype, little-endian.
class ExternalSliceCodec {
 public:
  virtual ~ExternalSliceCodec() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual nlohmann::json parameters() const { return nlohmann::json::object(); }
  virtual Bytes encode_slice(ByteView raw, std::size_t x, std::size_t y, ScalarType dtype) = 0;
  virtual Bytes decode_slice(ByteView encoded, std::size_t x, std::size_t y, ScalarType dtype) = 0;
};

struct RvcEncodeOptions {
  Codec codec = Codec::DeltaDeflate;
  int deflate_level = Z_DEFAULT_COMPRESSION;
  ExternalSliceCodec* external = nullptr;
  nlohmann::json metadata = nlohmann::json::object();  // merged over the derived keys
  std::uint16_t flags = 0;
};

struct RvcDecodeOptions {
  ExternalSliceCodec* external = nullptr;
};

namespace rvc {

inline constexpr std::size_t kFixedHeader = 82;
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kFlagTokenized = 1;

struct Header {
  std::uint16_t version = kVersion;
  std::uint16_t flags = 0;
  ScalarType dtype = ScalarType::I16;
  Codec codec = Codec::Raw;
  Dims dims;
  std::array<float, 3> spacing{1, 1, 1};
  float slope = 1, intercept = 0;
  std::array<float, 9> orientation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  nlohmann::json metadata;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> slices;
  std::size_t payload_start = 0;
  std::size_t payload_end = 0;  // position of the trailing CRC
};

namespace detail {

inline Bytes deflate_bytes(ByteView in, int level) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  Bytes out(cap);
  if (compress2(out.data(), &cap, in.data(), static_cast<uLong>(in.size()), level) != Z_OK)
    fail(Errc::CodecUnavailable, "deflate failed");
  out.resize(cap);
  return out;
}

inline Bytes inflate_bytes(ByteView in, std::size_t expected) {
  Bytes out(expected);
  uLongf len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &len, in.data(), static_cast<uLong>(in.size()));
  if (rc != Z_OK || len != expected)
    fail(Errc::TruncatedPayload, "slice inflated to " + std::to_string(len) + " bytes, expected " + std::to_string(expected));
  return out;
}

inline void check_representable(const VoxelVolume& v) {
  for (float x : v.data) {
    bool ok = true;
    switch (v.dtype) {
      case ScalarType::I16: ok = x == std::nearbyint(x) && x >= -32768.0f && x <= 32767.0f; break;
      case ScalarType::U16: ok = x == std::nearbyint(x) && x >= 0.0f && x <= 65535.0f; break;
      case ScalarType::F32: ok = true; break;
    }
    if (!ok) fail(Errc::UnsupportedDatatype, "value " + std::to_string(x) + " not representable as " + std::string(scalar_name(v.dtype)));
  }
}

// Slice z of the volume in container dtype, little-endian.
inline Bytes slice_bytes(const VoxelVolume& v, std::size_t z) {
  const std::size_t n = v.dims.slice_count();
  const float* src = v.data.data() + z * n;
  Bytes out(n * scalar_size(v.dtype));
  for (std::size_t i = 0; i < n; ++i) {
    switch (v.dtype) {
      case ScalarType::I16: {
        const auto s = static_cast<std::int16_t>(src[i]);
        std::memcpy(out.data() + 2 * i, &s, 2);
        break;
      }
      case ScalarType::U16: {
        const auto s = static_cast<std::uint16_t>(src[i]);
        std::memcpy(out.data() + 2 * i, &s, 2);
        break;
      }
      case ScalarType::F32: std::memcpy(out.data() + 4 * i, &src[i], 4); break;
    }
  }
  return out;
}

// In-place: cur[i] -= prev[i] over 16-bit lanes, wrapping.
inline void delta16(Bytes& cur, const Bytes& prev) {
  for (std::size_t i = 0; i + 1 < cur.size(); i += 2) {
    std::uint16_t a, b;
    std::memcpy(&a, cur.data() + i, 2);
    std::memcpy(&b, prev.data() + i, 2);
    const auto d = static_cast<std::uint16_t>(a - b);
    std::memcpy(cur.data() + i, &d, 2);
  }
}

inline void undelta16(Bytes& cur, const Bytes& prev) {
  for (std::size_t i = 0; i + 1 < cur.size(); i += 2) {
    std::uint16_t a, b;
    std::memcpy(&a, cur.data() + i, 2);
    std::memcpy(&b, prev.data() + i, 2);
    const auto d = static_cast<std::uint16_t>(a + b);
    std::memcpy(cur.data() + i, &d, 2);
  }
}

inline void to_values(const Bytes& raw, ScalarType dtype, float slope, float intercept, float* dst) {
  const bool calibrate = slope != 1.0f || intercept != 0.0f;
  const std::size_t n = raw.size() / scalar_size(dtype);
  for (std::size_t i = 0; i < n; ++i) {
    float v = 0;
    switch (dtype) {
      case ScalarType::I16: {
        std::int16_t s;
        std::memcpy(&s, raw.data() + 2 * i, 2);
        v = s;
        break;
      }
      case ScalarType::U16: {
        std::uint16_t s;
        std::memcpy(&s, raw.data() + 2 * i, 2);
        v = s;
        break;
      }
      case ScalarType::F32: std::memcpy(&v, raw.data() + 4 * i, 4); break;
    }
    dst[i] = calibrate ? static_cast<float>(static_cast<double>(v) * slope + intercept) : v;
  }
}

}  // namespace detail

/// Parses and validates the header, slice table, and CRC. Throws BadMagic,
/// TruncatedPayload, or CrcMismatch.
inline Header read_header(ByteView bytes) {
  if (bytes.size() < 4) fail(Errc::TruncatedPayload, "stream shorter than magic");
  if (std::memcmp(bytes.data(), "RVC1", 4) != 0) fail(Errc::BadMagic, "not an RVC1 stream");
  ByteReader r(bytes, Errc::TruncatedPayload);
  r.skip(4);
  Header h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kVersion) fail(Errc::BadMagic, "unsupported version " + std::to_string(h.version));
  h.flags = r.get<std::uint16_t>();
  const auto dtype = r.get<std::uint8_t>();
  const auto codec = r.get<std::uint8_t>();
  if (dtype > 2) fail(Errc::BadMagic, "dtype code " + std::to_string(dtype));
  if (codec > 3) fail(Errc::BadMagic, "codec code " + std::to_string(codec));
  h.dtype = static_cast<ScalarType>(dtype);
  h.codec = static_cast<Codec>(codec);
  h.dims = {r.get<std::uint32_t>(), r.get<std::uint32_t>(), r.get<std::uint32_t>()};
  if (h.dims.x == 0 || h.dims.y == 0 || h.dims.z == 0) fail(Errc::BadMagic, "degenerate dims (zero extent)");
  for (auto& s : h.spacing) s = r.get<float>();
  h.slope = r.get<float>();
  h.intercept = r.get<float>();
  for (auto& o : h.orientation) o = r.get<float>();
  const auto meta_len = r.get<std::uint32_t>();
  const auto meta = r.take(meta_len);

  if (h.dims.z > r.remaining() / 16) fail(Errc::TruncatedPayload, "slice table extends past end of stream");
  h.slices.resize(h.dims.z);
  for (auto& [off, len] : h.slices) {
    off = r.get<std::uint64_t>();
    len = r.get<std::uint64_t>();
  }
  h.payload_start = r.pos();

  std::uint64_t end = 0;
  for (const auto& [off, len] : h.slices) {
    if (off > (std::uint64_t{1} << 48) || len > (std::uint64_t{1} << 48)) fail(Errc::TruncatedPayload, "slice extent out of range");
    end = std::max(end, off + len);
  }
  const std::uint64_t total = h.payload_start + end + 4;
  if (bytes.size() < total) fail(Errc::TruncatedPayload, "stream has " + std::to_string(bytes.size()) + " bytes, layout needs " + std::to_string(total));
  if (bytes.size() > total) fail(Errc::CrcMismatch, "trailing bytes after CRC position");
  h.payload_end = static_cast<std::size_t>(h.payload_start + end);

  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + h.payload_end, 4);
  if (crc32(bytes.first(h.payload_end)) != stored) fail(Errc::CrcMismatch, "container checksum mismatch");

  for (std::size_t i = 1; i < h.slices.size(); ++i)
    if (h.slices[i].first < h.slices[i - 1].first + h.slices[i - 1].second || h.slices[i].first <= h.slices[i - 1].first)
      fail(Errc::BadMagic, "slice offsets not strictly increasing");
  try {
    h.metadata = nlohmann::json::parse(meta.begin(), meta.end());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::BadMagic, std::string("metadata is not valid JSON: ") + e.what());
  }
  return h;
}

}  // namespace rvc

/// Encodes a volume as an RVC1 stream. Values must be exactly representable
/// in the volume's dtype.
inline Bytes encode_rvc(const VoxelVolume& v, const RvcEncodeOptions& opt = {}) {
  if (v.dims.count() == 0) fail(Errc::DegenerateVolume, "cannot encode an empty volume");
  if (v.data.size() != v.dims.count()) fail(Errc::InconsistentGeometry, "data size does not match dims");
  if (opt.codec == Codec::DeltaDeflate && v.dtype == ScalarType::F32)
    fail(Errc::UnsupportedDtypeForCodec, "delta-deflate requires an integer dtype");
  if (opt.codec == Codec::External && opt.external == nullptr)
    fail(Errc::CodecUnavailable, "no external slice codec registered");
  rvc::detail::check_representable(v);

  nlohmann::json meta = {{"modality", modality_name(v.modality)},
                         {"exam_id", v.provenance.exam_id},
                         {"series_uid", v.provenance.series_uid},
                         {"origin", v.origin}};
  if (opt.codec == Codec::External)
    meta["external_codec"] = {{"name", opt.external->name()}, {"params", opt.external->parameters()}};
  for (auto& [k, val] : opt.metadata.items()) meta[k] = val;
  const auto meta_text = meta.dump();

  std::vector<Bytes> payloads(v.dims.z);
  Bytes prev;
  for (std::size_t z = 0; z < v.dims.z; ++z) {
    auto raw = rvc::detail::slice_bytes(v, z);
    switch (opt.codec) {
      case Codec::Raw: payloads[z] = std::move(raw); break;
      case Codec::Deflate: payloads[z] = rvc::detail::deflate_bytes(raw, opt.deflate_level); break;
      case Codec::DeltaDeflate: {
        auto delta = raw;
        if (z > 0) rvc::detail::delta16(delta, prev);
        payloads[z] = rvc::detail::deflate_bytes(delta, opt.deflate_level);
        prev = std::move(raw);
        break;
      }
      case Codec::External:
        payloads[z] = opt.external->encode_slice(raw, v.dims.x, v.dims.y, v.dtype);
        if (payloads[z].empty()) fail(Errc::CodecUnavailable, "external codec produced an empty slice");
        break;
    }
  }

  ByteWriter w;
  w.put_bytes(std::string_view("RVC1"));
  w.put<std::uint16_t>(rvc::kVersion);
  w.put<std::uint16_t>(opt.flags);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(v.dtype));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(opt.codec));
  for (auto d : {v.dims.x, v.dims.y, v.dims.z}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double s : v.spacing) w.put<float>(static_cast<float>(s));
  w.put<float>(1.0f);
  w.put<float>(0.0f);
  for (const auto& col : v.orientation.cols)
    for (double c : col) w.put<float>(static_cast<float>(c));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta_text.size()));
  w.put_bytes(meta_text);
  std::uint64_t off = 0;
  for (const auto& p : payloads) {
    w.put<std::uint64_t>(off);
    w.put<std::uint64_t>(p.size());
    off += p.size();
  }
  for (const auto& p : payloads) w.put_bytes(p);
  w.put<std::uint32_t>(crc32(w.bytes()));
  return std::move(w).take();
}

namespace rvc::detail {

// Decodes slices [0, last] into `dst` rows (or only `last` when independent).
inline void decode_slices(ByteView bytes, const Header& h, std::size_t first, std::size_t last, float* dst,
                          const RvcDecodeOptions& opt) {
  const std::size_t n = h.dims.slice_count();
  const std::size_t raw_size = n * scalar_size(h.dtype);
  ExternalSliceCodec* ext = nullptr;
  if (h.codec == Codec::External) {
    ext = opt.external;
    const auto want = h.metadata.contains("external_codec") ? h.metadata["external_codec"].value("name", "") : "";
    if (!ext) fail(Errc::CodecUnavailable, "stream needs external codec '" + want + "'");
    if (ext->name() != want) fail(Errc::CodecUnavailable, "stream needs external codec '" + want + "', have '" + ext->name() + "'");
  }
  const std::size_t start = h.codec == Codec::DeltaDeflate ? 0 : first;
  Bytes prev;
  for (std::size_t z = start; z <= last; ++z) {
    const auto [off, len] = h.slices[z];
    const auto enc = bytes.subspan(h.payload_start + off, len);
    Bytes raw;
    switch (h.codec) {
      case Codec::Raw:
        if (len != raw_size) fail(Errc::TruncatedPayload, "raw slice " + std::to_string(z) + " has wrong length");
        raw.assign(enc.begin(), enc.end());
        break;
      case Codec::Deflate: raw = inflate_bytes(enc, raw_size); break;
      case Codec::DeltaDeflate:
        if (h.dtype == ScalarType::F32) fail(Errc::UnsupportedDtypeForCodec, "delta-deflate stream with f32 dtype");
        raw = inflate_bytes(enc, raw_size);
        if (z > 0) undelta16(raw, prev);
        break;
      case Codec::External:
        raw = ext->decode_slice(enc, h.dims.x, h.dims.y, h.dtype);
        if (raw.size() != raw_size) fail(Errc::TruncatedPayload, "external codec returned wrong slice size");
        break;
    }
    if (z >= first) to_values(raw, h.dtype, h.slope, h.intercept, dst + (z - first) * n);
    if (h.codec == Codec::DeltaDeflate) prev = std::move(raw);
  }
}

}  // namespace rvc::detail

/// Full decode. CRC and layout are checked before any slice is touched.
inline VoxelVolume decode_rvc(ByteView bytes, const RvcDecodeOptions& opt = {}) {
  const auto h = rvc::read_header(bytes);
  VoxelVolume v(h.dims);
  v.spacing = {h.spacing[0], h.spacing[1], h.spacing[2]};
  for (int c = 0; c < 3; ++c)
    v.orientation.cols[c] = {h.orientation[3 * c], h.orientation[3 * c + 1], h.orientation[3 * c + 2]};
  v.dtype = (h.slope == 1.0f && h.intercept == 0.0f) ? h.dtype : ScalarType::F32;
  const auto& m = h.metadata;
  if (m.is_object()) {
    if (auto mod = parse_modality(m.value("modality", "other"))) v.modality = *mod;
    v.provenance.exam_id = m.value("exam_id", "");
    v.provenance.series_uid = m.value("series_uid", "");
    if (m.contains("origin") && m["origin"].is_array() && m["origin"].size() == 3) v.origin = m["origin"].get<Vec3>();
  }
  rvc::detail::decode_slices(bytes, h, 0, h.dims.z - 1, v.data.data(), opt);
  return v;
}

/// Slice z (x fastest) without decoding the whole volume; delta-deflate
/// decodes the prefix 0..z.
inline std::vector<float> random_access_slice(ByteView bytes, std::size_t z, const RvcDecodeOptions& opt = {}) {
  const auto h = rvc::read_header(bytes);
  if (z >= h.dims.z) fail(Errc::IndexOutOfRange, "slice " + std::to_string(z) + " of " + std::to_string(h.dims.z));
  std::vector<float> out(h.dims.slice_count());
  rvc::detail::decode_slices(bytes, h, z, z, out.data(), opt);
  return out;
}

/// Token grid stored as an RVC payload: dims = (patch voxels, tokens,
/// channels), dtype f32, one slice per channel.
inline Bytes encode_token_grid_rvc(const TokenGrid& tg, Modality modality, Codec codec = Codec::Deflate,
                                   nlohmann::json extra = nlohmann::json::object()) {
  VoxelVolume v(Dims{tg.patch_voxels(), tg.token_count(), tg.channels});
  v.data = tg.values;
  v.dtype = ScalarType::F32;
  v.modality = modality;
  RvcEncodeOptions opt;
  opt.codec = codec;
  opt.flags = rvc::kFlagTokenized;
  opt.metadata = std::move(extra);
  opt.metadata["token_grid"] = {{"channels", tg.channels},
                                {"grid", {tg.grid.x, tg.grid.y, tg.grid.z}},
                                {"patch", {tg.patch.x, tg.patch.y, tg.patch.z}}};
  return encode_rvc(v, opt);
}

inline TokenGrid decode_token_grid_rvc(ByteView bytes) {
  const auto h = rvc::read_header(bytes);
  if (!(h.flags & rvc::kFlagTokenized) || !h.metadata.contains("token_grid"))
    fail(Errc::BadMagic, "container does not hold a token grid");
  const auto& tgm = h.metadata["token_grid"];
  TokenGrid tg;
  tg.channels = tgm.at("channels").get<std::size_t>();
  const auto g = tgm.at("grid").get<std::array<std::size_t, 3>>();
  const auto p = tgm.at("patch").get<std::array<std::size_t, 3>>();
  tg.grid = {g[0], g[1], g[2]};
  tg.patch = {p[0], p[1], p[2]};
  if (Dims{tg.patch_voxels(), tg.token_count(), tg.channels} != h.dims)
    fail(Errc::BadMagic, "token grid metadata disagrees with dims");
  auto v = decode_rvc(bytes);
  tg.values = std::move(v.data);
  return tg;
}

}  // namespace rave
