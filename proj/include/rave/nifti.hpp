#pragma once

// NIfTI-1 single-file (.nii) reader and writer for scalar volumes.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "rave/bytes.hpp"
#include "rave/error.hpp"
#include "rave/volume.hpp"

namespace rave {

namespace nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

enum Datatype : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_INT8 = 256,
  DT_UINT16 = 512,
  DT_UINT32 = 768,
};

namespace detail {

template <typename T>
T load(ByteView b, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  if (swap) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    std::reverse(raw, raw + sizeof(T));
    std::memcpy(&v, raw, sizeof(T));
  }
  return v;
}

inline std::size_t datatype_size(std::int16_t dt) {
  switch (dt) {
    case DT_UINT8:
    case DT_INT8: return 1;
    case DT_INT16:
    case DT_UINT16: return 2;
    case DT_INT32:
    case DT_UINT32:
    case DT_FLOAT32: return 4;
    case DT_FLOAT64: return 8;
    default: return 0;
  }
}

// Rotation matrix from the qform quaternion (b, c, d), a = sqrt(1 - b²-c²-d²).
inline Mat3 quaternion_to_matrix(double b, double c, double d, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double s = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= s;
    c *= s;
    d *= s;
    a = 0;
  } else {
    a = std::sqrt(a);
  }
  Mat3 m;
  m.cols[0] = {a * a + b * b - c * c - d * d, 2 * (b * c + a * d), 2 * (b * d - a * c)};
  m.cols[1] = {2 * (b * c - a * d), a * a + c * c - b * b - d * d, 2 * (c * d + a * b)};
  m.cols[2] = {qfac * 2 * (b * d + a * c), qfac * 2 * (c * d - a * b), qfac * (a * a + d * d - c * c - b * b)};
  return m;
}

}  // namespace detail
}  // namespace nifti

/// Reads a .nii byte stream. Stored values become float32 after
/// scl_slope/scl_inter (applied when scl_slope is nonzero). Big-endian files
/// are detected from sizeof_hdr and swapped.
inline VoxelVolume parse_nifti(ByteView bytes) {
  using namespace nifti;
  using nifti::detail::load;
  if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) fail(Errc::BadMagic, "file shorter than NIfTI-1 header");
  bool swap = false;
  if (load<std::int32_t>(bytes, 0, false) != kHeaderSize) {
    if (load<std::int32_t>(bytes, 0, true) != kHeaderSize) fail(Errc::BadMagic, "sizeof_hdr is not 348");
    swap = true;
  }
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) fail(Errc::BadMagic, "magic is not 'n+1' (single-file NIfTI-1)");

  const auto ndim = load<std::int16_t>(bytes, 40, swap);
  if (ndim < 1 || ndim > 7) fail(Errc::BadMagic, "dim[0] = " + std::to_string(ndim));
  std::size_t d[3] = {1, 1, 1};
  for (int k = 0; k < ndim; ++k) {
    const auto n = load<std::int16_t>(bytes, 42 + 2 * k, swap);
    if (n <= 0) fail(Errc::BadMagic, "dim[" + std::to_string(k + 1) + "] = " + std::to_string(n));
    if (k < 3)
      d[k] = static_cast<std::size_t>(n);
    else if (n != 1)
      fail(Errc::UnsupportedDatatype, "only scalar 3D volumes are supported (dim[" + std::to_string(k + 1) + "] = " +
                                          std::to_string(n) + ")");
  }

  const auto datatype = load<std::int16_t>(bytes, 70, swap);
  const auto elem = nifti::detail::datatype_size(datatype);
  if (elem == 0) fail(Errc::UnsupportedDatatype, "datatype code " + std::to_string(datatype));

  VoxelVolume v(Dims{d[0], d[1], d[2]});
  for (int k = 0; k < 3; ++k) {
    const float p = load<float>(bytes, 80 + 4 * k, swap);
    v.spacing[k] = (k < ndim && p > 0) ? static_cast<double>(p) : 1.0;
  }

  const float vox_offset = load<float>(bytes, 108, swap);
  const float slope = load<float>(bytes, 112, swap);
  const float inter = load<float>(bytes, 116, swap);
  const auto qform_code = load<std::int16_t>(bytes, 252, swap);
  const auto sform_code = load<std::int16_t>(bytes, 254, swap);

  if (sform_code > 0) {
    for (int c = 0; c < 3; ++c) {
      Vec3 col;
      for (int r = 0; r < 3; ++r) col[r] = load<float>(bytes, 280 + 16 * r + 4 * c, swap);
      const double n = norm(col);
      if (n > 0) col = {col[0] / n, col[1] / n, col[2] / n};
      v.orientation.cols[c] = col;
    }
    for (int r = 0; r < 3; ++r) v.origin[r] = load<float>(bytes, 280 + 16 * r + 12, swap);
  } else if (qform_code > 0) {
    const float qfac_raw = load<float>(bytes, 76, swap);
    v.orientation = nifti::detail::quaternion_to_matrix(load<float>(bytes, 256, swap), load<float>(bytes, 260, swap),
                                                        load<float>(bytes, 264, swap), qfac_raw < 0 ? -1.0 : 1.0);
    for (int r = 0; r < 3; ++r) v.origin[r] = load<float>(bytes, 268 + 4 * r, swap);
  }

  const auto offset = static_cast<std::size_t>(std::max(vox_offset, 352.0f));
  const std::size_t need = v.dims.count() * elem;
  if (bytes.size() < offset || bytes.size() - offset < need)
    fail(Errc::TruncatedPayload, "voxel data holds " + std::to_string(bytes.size() > offset ? bytes.size() - offset : 0) +
                                     " bytes, need " + std::to_string(need));

  const bool scaled = slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f);
  auto src = bytes.subspan(offset, need);
  for (std::size_t i = 0; i < v.dims.count(); ++i) {
    double raw = 0;
    switch (datatype) {
      case DT_UINT8: raw = load<std::uint8_t>(src, i, swap); break;
      case DT_INT8: raw = load<std::int8_t>(src, i, swap); break;
      case DT_INT16: raw = load<std::int16_t>(src, 2 * i, swap); break;
      case DT_UINT16: raw = load<std::uint16_t>(src, 2 * i, swap); break;
      case DT_INT32: raw = load<std::int32_t>(src, 4 * i, swap); break;
      case DT_UINT32: raw = load<std::uint32_t>(src, 4 * i, swap); break;
      case DT_FLOAT32: raw = load<float>(src, 4 * i, swap); break;
      case DT_FLOAT64: raw = load<double>(src, 8 * i, swap); break;
    }
    v.data[i] = static_cast<float>(scaled ? raw * slope + inter : raw);
  }
  if (datatype == DT_FLOAT32 || datatype == DT_FLOAT64 || scaled)
    v.dtype = ScalarType::F32;
  else
    v.dtype = narrowest_scalar_type(v.data);
  return v;
}

/// Writes a single-file NIfTI-1 volume in the volume's declared scalar type,
/// with an sform carrying orientation, spacing and origin.
inline Bytes write_nifti(const VoxelVolume& v) {
  using namespace nifti;
  if (v.dims.x > 32767 || v.dims.y > 32767 || v.dims.z > 32767 || v.dims.count() == 0)
    fail(Errc::UnsupportedDatatype, "dims outside NIfTI-1 range");
  std::int16_t datatype;
  std::int16_t bitpix;
  switch (v.dtype) {
    case ScalarType::I16: datatype = DT_INT16; bitpix = 16; break;
    case ScalarType::U16: datatype = DT_UINT16; bitpix = 16; break;
    default: datatype = DT_FLOAT32; bitpix = 32; break;
  }

  ByteWriter w;
  w.put<std::int32_t>(kHeaderSize);
  w.pad_to(40);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.dims.x), static_cast<std::int16_t>(v.dims.y),
                                static_cast<std::int16_t>(v.dims.z), 1, 1, 1, 1};
  for (auto d : dims) w.put(d);
  w.pad_to(70);
  w.put(datatype);
  w.put(bitpix);
  w.put<std::int16_t>(0);  // slice_start
  const float pixdim[8] = {1.0f, static_cast<float>(v.spacing[0]), static_cast<float>(v.spacing[1]),
                           static_cast<float>(v.spacing[2]), 0, 0, 0, 0};
  for (auto p : pixdim) w.put(p);
  w.put<float>(static_cast<float>(kVoxOffset));
  w.put<float>(1.0f);  // scl_slope
  w.put<float>(0.0f);  // scl_inter
  w.pad_to(123);
  w.put<std::uint8_t>(10);  // xyzt_units: mm, s
  w.pad_to(252);
  w.put<std::int16_t>(0);  // qform_code
  w.put<std::int16_t>(1);  // sform_code: scanner anatomical
  w.pad_to(280);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.put<float>(static_cast<float>(v.orientation.cols[c][r] * v.spacing[c]));
    w.put<float>(static_cast<float>(v.origin[r]));
  }
  w.pad_to(344);
  w.put_bytes(std::string_view("n+1\0", 4));
  w.pad_to(kVoxOffset);

  for (float x : v.data) {
    switch (v.dtype) {
      case ScalarType::I16: w.put(static_cast<std::int16_t>(x)); break;
      case ScalarType::U16: w.put(static_cast<std::uint16_t>(x)); break;
      default: w.put(x); break;
    }
  }
  return std::move(w).take();
}

}  // namespace rave
