#pragma once

// Modality plans, patchification into token grids, and the TGR1 token file.

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rave/bytes.hpp"
#include "rave/error.hpp"
#include "rave/preprocess.hpp"
#include "rave/volume.hpp"
#include "rave/windowing.hpp"

namespace rave {

struct ModalityPlan {
  std::string name;
  Modality modality = Modality::Other;
  Vec3 target_spacing{1, 1, 1};
  Dims target_dims;
  Dims patch;
  WindowSpec windows = std::vector<WindowPreset>{};
  float fill = -1000.0f;

  [[nodiscard]] Dims grid() const {
    return {target_dims.x / patch.x, target_dims.y / patch.y, target_dims.z / patch.z};
  }
  [[nodiscard]] std::size_t token_count() const { return grid().count(); }
  [[nodiscard]] std::size_t channels() const { return window_count(windows); }
};

inline void validate(const ModalityPlan& p) {
  if (p.patch.x == 0 || p.patch.y == 0 || p.patch.z == 0) fail(Errc::InvalidPlan, p.name + ": zero patch size");
  if (p.target_dims.x % p.patch.x || p.target_dims.y % p.patch.y || p.target_dims.z % p.patch.z)
    fail(Errc::IndivisibleDims, p.name + ": target dims not divisible by patch");
  for (double s : p.target_spacing)
    if (!(s > 0)) fail(Errc::InvalidPlan, p.name + ": spacing must be positive");
  std::visit([](const auto& w) {
    if constexpr (std::is_same_v<std::decay_t<decltype(w)>, PercentileWindow>)
      validate(w);
    else {
      if (w.empty()) fail(Errc::InvalidPlan, "CT plan needs at least one window preset");
      for (const auto& p : w) validate(p);
    }
  }, p.windows);
}

/// The four shipped plans (grid HWD mapped to x, y, z).
inline std::vector<ModalityPlan> shipped_plans() {
  return {
      {"ct-abdomen-pelvis", Modality::CtAbdomenPelvis, {1, 1, 1}, {384, 384, 384}, {6, 6, 6}, default_ct_presets(), -1000},
      {"ct-chest", Modality::CtChest, {1, 1, 1}, {256, 256, 256}, {8, 8, 4}, default_ct_presets(), -1000},
      {"ct-head", Modality::CtHead, {1, 1, 1}, {256, 256, 128}, {8, 8, 4}, default_ct_presets(), -1000},
      {"mri-breast", Modality::MriBreast, {1, 1, 1}, {384, 384, 192}, {12, 12, 6}, PercentileWindow{1, 99}, 0},
  };
}

inline ModalityPlan shipped_plan(std::string_view name) {
  for (auto& p : shipped_plans())
    if (p.name == name) return p;
  fail(Errc::InvalidPlan, "no shipped plan named '" + std::string(name) + "'");
}

/// Windows a volume per the plan: presets for CT, the percentile rule otherwise.
inline MultiChannelVolume apply_windows(const VoxelVolume& v, const ModalityPlan& plan) {
  return std::visit(
      [&](const auto& w) -> MultiChannelVolume {
        if constexpr (std::is_same_v<std::decay_t<decltype(w)>, PercentileWindow>)
          return apply_percentile_window(v, w);
        else
          return apply_presets(v, w);
      },
      plan.windows);
}

/// Resample, crop/pad, then window.
inline MultiChannelVolume preprocess(const VoxelVolume& v, const ModalityPlan& plan) {
  validate(plan);
  auto resampled = resample_isotropic(v, plan.target_spacing);
  auto fixed = normalize_grid(resampled, plan.target_dims, plan.fill);
  return apply_windows(fixed, plan);
}

/// Non-overlapping patches. Tokens are in raster order with z slowest, then y,
/// then x; voxels inside a patch use the same order. Layout of `values` is
/// [channel][gz][gy][gx][pz][py][px].
struct TokenGrid {
  std::size_t channels = 0;
  Dims grid;
  Dims patch;
  std::vector<float> values;

  [[nodiscard]] std::size_t token_count() const { return grid.count(); }
  [[nodiscard]] std::size_t patch_voxels() const { return patch.count(); }
  [[nodiscard]] Dims volume_dims() const { return {grid.x * patch.x, grid.y * patch.y, grid.z * patch.z}; }
  bool operator==(const TokenGrid&) const = default;
};

namespace detail {

// Visits the multi-channel volume in token order, passing the source index.
template <typename F>
void for_each_token_voxel(Dims dims, std::size_t channels, Dims patch, F&& f) {
  const Dims grid{dims.x / patch.x, dims.y / patch.y, dims.z / patch.z};
  const std::size_t per_channel = dims.count();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t gz = 0; gz < grid.z; ++gz)
      for (std::size_t gy = 0; gy < grid.y; ++gy)
        for (std::size_t gx = 0; gx < grid.x; ++gx)
          for (std::size_t pz = 0; pz < patch.z; ++pz)
            for (std::size_t py = 0; py < patch.y; ++py) {
              const std::size_t z = gz * patch.z + pz, y = gy * patch.y + py;
              const std::size_t row = c * per_channel + (z * dims.y + y) * dims.x + gx * patch.x;
              for (std::size_t px = 0; px < patch.x; ++px) f(row + px);
            }
}

inline void check_divisible(Dims dims, Dims patch) {
  if (patch.x == 0 || patch.y == 0 || patch.z == 0) fail(Errc::IndivisibleDims, "zero patch size");
  if (dims.x % patch.x || dims.y % patch.y || dims.z % patch.z)
    fail(Errc::IndivisibleDims, "volume " + std::to_string(dims.x) + "x" + std::to_string(dims.y) + "x" +
                                    std::to_string(dims.z) + " not divisible by patch " + std::to_string(patch.x) +
                                    "x" + std::to_string(patch.y) + "x" + std::to_string(patch.z));
}

}  // namespace detail

inline TokenGrid patchify(const MultiChannelVolume& mc, Dims patch) {
  detail::check_divisible(mc.dims, patch);
  TokenGrid tg{mc.channels, {mc.dims.x / patch.x, mc.dims.y / patch.y, mc.dims.z / patch.z}, patch, {}};
  tg.values.reserve(mc.values.size());
  detail::for_each_token_voxel(mc.dims, mc.channels, patch, [&](std::size_t src) { tg.values.push_back(mc.values[src]); });
  return tg;
}

inline MultiChannelVolume unpatchify(const TokenGrid& tg) {
  MultiChannelVolume mc{tg.volume_dims(), tg.channels, std::vector<float>(tg.values.size())};
  std::size_t i = 0;
  detail::for_each_token_voxel(mc.dims, mc.channels, tg.patch, [&](std::size_t dst) { mc.values[dst] = tg.values[i++]; });
  return mc;
}

inline TokenGrid tokenize(const VoxelVolume& v, const ModalityPlan& plan) { return patchify(preprocess(v, plan), plan.patch); }

// TGR1: 64-byte little-endian header followed by float32 token values.
namespace tgr {

inline constexpr std::size_t kHeaderSize = 64;

struct Header {
  std::uint32_t channels = 0;
  Dims grid;
  Dims patch;
  Modality modality = Modality::Other;
  std::uint64_t token_count = 0;
  std::uint64_t payload_bytes = 0;
  std::uint32_t payload_crc = 0;
};

inline Bytes encode_header(const Header& h) {
  ByteWriter w;
  w.put_bytes(std::string_view("TGR1"));
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(kHeaderSize);
  w.put<std::uint32_t>(h.channels);
  for (auto d : {h.grid.x, h.grid.y, h.grid.z}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (auto d : {h.patch.x, h.patch.y, h.patch.z}) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(h.modality));
  w.put<std::uint8_t>(0);  // dtype: float32
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(h.token_count);
  w.put<std::uint64_t>(h.payload_bytes);
  w.put<std::uint32_t>(h.payload_crc);
  w.put<std::uint32_t>(0);
  return std::move(w).take();
}

inline Header decode_header(ByteView bytes) {
  if (bytes.size() < kHeaderSize) fail(Errc::TruncatedPayload, "TGR header needs 64 bytes");
  ByteReader r(bytes);
  if (std::string_view(reinterpret_cast<const char*>(r.take(4).data()), 4) != "TGR1") fail(Errc::BadMagic, "not a TGR1 file");
  if (r.get<std::uint16_t>() != 1) fail(Errc::BadMagic, "unsupported TGR version");
  if (r.get<std::uint16_t>() != kHeaderSize) fail(Errc::BadMagic, "unexpected TGR header size");
  Header h;
  h.channels = r.get<std::uint32_t>();
  h.grid = {r.get<std::uint32_t>(), r.get<std::uint32_t>(), r.get<std::uint32_t>()};
  h.patch = {r.get<std::uint32_t>(), r.get<std::uint32_t>(), r.get<std::uint32_t>()};
  const auto mod = r.get<std::uint8_t>();
  if (mod > static_cast<std::uint8_t>(Modality::Other)) fail(Errc::BadMagic, "bad modality code");
  h.modality = static_cast<Modality>(mod);
  if (r.get<std::uint8_t>() != 0) fail(Errc::UnsupportedDatatype, "TGR dtype must be float32");
  r.skip(2);
  h.token_count = r.get<std::uint64_t>();
  h.payload_bytes = r.get<std::uint64_t>();
  h.payload_crc = r.get<std::uint32_t>();
  if (h.token_count != h.grid.count()) fail(Errc::BadMagic, "token count disagrees with grid");
  if (h.payload_bytes != std::uint64_t{h.channels} * h.token_count * h.patch.count() * 4)
    fail(Errc::BadMagic, "payload size disagrees with geometry");
  return h;
}

}  // namespace tgr

inline Bytes encode_tgr(const TokenGrid& tg, Modality modality = Modality::Other) {
  const ByteView payload(reinterpret_cast<const std::uint8_t*>(tg.values.data()), tg.values.size() * 4);
  tgr::Header h{static_cast<std::uint32_t>(tg.channels), tg.grid, tg.patch, modality, tg.token_count(),
                payload.size(), crc32(payload)};
  auto out = tgr::encode_header(h);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

namespace detail {

// Core TGR writer. `channel(c)` yields channel c as a dims.count() span; the
// header goes in last once the CRC is known.
template <typename ChannelFn>
void write_tgr_channels(std::ostream& os, Dims dims, std::size_t channels, Dims patch, Modality modality,
                        ChannelFn&& channel) {
  check_divisible(dims, patch);
  const Dims grid{dims.x / patch.x, dims.y / patch.y, dims.z / patch.z};
  std::vector<float> buf;
  buf.reserve(1u << 16);
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto start = os.tellp();
  os.write(std::string(tgr::kHeaderSize, '\0').data(), tgr::kHeaderSize);
  auto flush = [&] {
    const auto* p = reinterpret_cast<const Bytef*>(buf.data());
    crc = ::crc32(crc, p, static_cast<uInt>(buf.size() * 4));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    buf.clear();
  };
  for (std::size_t c = 0; c < channels; ++c) {
    const std::span<const float> src = channel(c);
    for_each_token_voxel(dims, 1, patch, [&](std::size_t i) {
      buf.push_back(src[i]);
      if (buf.size() == buf.capacity()) flush();
    });
  }
  flush();
  const tgr::Header h{static_cast<std::uint32_t>(channels), grid, patch, modality, grid.count(),
                      std::uint64_t{channels} * dims.count() * 4, static_cast<std::uint32_t>(crc)};
  const auto end = os.tellp();
  os.seekp(start);
  const auto hdr = tgr::encode_header(h);
  os.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
  os.seekp(end);
  if (!os) fail(Errc::IoError, "failed writing TGR stream");
}

}  // namespace detail

/// Streams a multi-channel volume to `os` in TGR1 token order without
/// materializing the token grid.
inline void write_tgr(std::ostream& os, const MultiChannelVolume& mc, Dims patch, Modality modality) {
  detail::write_tgr_channels(os, mc.dims, mc.channels, patch, modality, [&](std::size_t c) { return mc.channel(c); });
}

/// Full pipeline straight to TGR: resample and crop/pad once, then window one
/// channel at a time. Peak memory is about two single-channel grids instead
/// of the whole channel stack (11 x 384^3 floats for abdomen CT).
inline void write_tgr(std::ostream& os, const VoxelVolume& v, const ModalityPlan& plan, Modality modality) {
  validate(plan);
  const auto fixed = normalize_grid(resample_isotropic(v, plan.target_spacing), plan.target_dims, plan.fill);
  std::vector<float> scratch(fixed.data.size());
  std::visit(
      [&](const auto& w) {
        if constexpr (std::is_same_v<std::decay_t<decltype(w)>, PercentileWindow>) {
          const auto mc = apply_percentile_window(fixed, w);
          write_tgr(os, mc, plan.patch, modality);
        } else {
          detail::write_tgr_channels(os, fixed.dims, w.size(), plan.patch, modality, [&](std::size_t c) {
            const double lower = w[c].lower(), width = w[c].width;
            for (std::size_t i = 0; i < fixed.data.size(); ++i) scratch[i] = window_value(fixed.data[i], lower, width);
            return std::span<const float>(scratch);
          });
        }
      },
      plan.windows);
}

inline TokenGrid decode_tgr(ByteView bytes, Modality* modality = nullptr) {
  const auto h = tgr::decode_header(bytes);
  if (bytes.size() - tgr::kHeaderSize < h.payload_bytes)
    fail(Errc::TruncatedPayload, "TGR payload shorter than header declares");
  if (bytes.size() - tgr::kHeaderSize > h.payload_bytes) fail(Errc::CrcMismatch, "trailing bytes after TGR payload");
  const auto payload = bytes.subspan(tgr::kHeaderSize, h.payload_bytes);
  if (crc32(payload) != h.payload_crc) fail(Errc::CrcMismatch, "TGR payload checksum mismatch");
  TokenGrid tg{h.channels, h.grid, h.patch, std::vector<float>(h.payload_bytes / 4)};
  std::memcpy(tg.values.data(), payload.data(), payload.size());
  if (modality) *modality = h.modality;
  return tg;
}

}  // namespace rave
