#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rave/error.hpp"

namespace rave {

using Vec3 = std::array<double, 3>;

/// Column-major 3x3 direction cosines: column 0 is the +x voxel axis, column 1
/// the +y axis, column 2 the +z (slice) axis, all in patient coordinates.
struct Mat3 {
  std::array<Vec3, 3> cols{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};

  static Mat3 identity() { return {}; }
  bool operator==(const Mat3&) const = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Dims {
  std::size_t x = 0, y = 0, z = 0;

  [[nodiscard]] std::size_t count() const noexcept { return x * y * z; }
  [[nodiscard]] std::size_t slice_count() const noexcept { return x * y; }
  bool operator==(const Dims&) const = default;
};

enum class Modality : std::uint8_t { CtAbdomenPelvis, CtChest, CtHead, MriBreast, Other };

constexpr std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::CtAbdomenPelvis: return "ct-abdomen-pelvis";
    case Modality::CtChest: return "ct-chest";
    case Modality::CtHead: return "ct-head";
    case Modality::MriBreast: return "mri-breast";
    case Modality::Other: return "other";
  }
  return "other";
}

inline std::optional<Modality> parse_modality(std::string_view s) {
  for (auto m : {Modality::CtAbdomenPelvis, Modality::CtChest, Modality::CtHead, Modality::MriBreast,
                 Modality::Other})
    if (modality_name(m) == s) return m;
  return std::nullopt;
}

constexpr bool is_ct(Modality m) noexcept {
  return m == Modality::CtAbdomenPelvis || m == Modality::CtChest || m == Modality::CtHead;
}

/// Scalar type the voxel values are exactly representable in.
enum class ScalarType : std::uint8_t { I16 = 0, U16 = 1, F32 = 2 };

constexpr std::size_t scalar_size(ScalarType t) noexcept { return t == ScalarType::F32 ? 4 : 2; }

constexpr std::string_view scalar_name(ScalarType t) noexcept {
  switch (t) {
    case ScalarType::I16: return "i16";
    case ScalarType::U16: return "u16";
    case ScalarType::F32: return "f32";
  }
  return "f32";
}

/// Narrowest type that holds every value exactly.
template <typename Range>
ScalarType narrowest_scalar_type(const Range& values) {
  bool integral = true, fits_i16 = true, fits_u16 = true;
  for (float v : values) {
    if (v != std::nearbyint(v) || !std::isfinite(v)) {
      integral = false;
      break;
    }
    if (v < -32768.0f || v > 32767.0f) fits_i16 = false;
    if (v < 0.0f || v > 65535.0f) fits_u16 = false;
  }
  if (!integral) return ScalarType::F32;
  if (fits_i16) return ScalarType::I16;
  if (fits_u16) return ScalarType::U16;
  return ScalarType::F32;
}

struct Provenance {
  std::string exam_id;
  std::string series_uid;
  std::string source;  // file or directory the volume came from
  std::size_t clamped_voxels = 0;
  bool operator==(const Provenance&) const = default;
};

/// Calibrated scalar grid. Values are HU for CT and raw non-negative
/// intensities for MRI. Layout is x fastest, then y, then z.
struct VoxelVolume {
  Dims dims;
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  Mat3 orientation;
  Modality modality = Modality::Other;
  ScalarType dtype = ScalarType::F32;
  Provenance provenance;
  std::vector<float> data;

  VoxelVolume() = default;
  VoxelVolume(Dims d, float fill = 0.0f) : dims(d), data(d.count(), fill) {}

  [[nodiscard]] std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims.x * (y + dims.y * z);
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data[index(x, y, z)]; }
  [[nodiscard]] float at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return data[index(x, y, z)];
  }
};

struct HuBand {
  float low = -1024.0f;
  float high = 3071.0f;
};

/// Clamps CT values into the plausibility band and records how many moved.
/// Non-CT volumes are left untouched.
inline std::size_t enforce_plausibility(VoxelVolume& v, HuBand band = {}) {
  if (!is_ct(v.modality)) return 0;
  std::size_t moved = 0;
  for (auto& x : v.data) {
    if (x < band.low) {
      x = band.low;
      ++moved;
    } else if (x > band.high) {
      x = band.high;
      ++moved;
    }
  }
  v.provenance.clamped_voxels += moved;
  return moved;
}

inline bool orientation_is_unit(const Mat3& m, double tol = 1e-3) {
  for (const auto& c : m.cols)
    if (std::abs(norm(c) - 1.0) > tol) return false;
  return true;
}

}  // namespace rave
