#pragma once

// Geometric preprocessing: resampling to a target spacing and center
// crop/pad onto a fixed grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rave/error.hpp"
#include "rave/volume.hpp"

namespace rave {

inline std::size_t resampled_extent(std::size_t n, double in_spacing, double out_spacing) {
  const auto e = static_cast<std::size_t>(std::llround(static_cast<double>(n) * in_spacing / out_spacing));
  return std::max<std::size_t>(e, 1);
}

/// Trilinear resampling. Output voxel i sits at physical offset
/// i * out_spacing from the first input voxel center; source coordinates past
/// the last input voxel clamp to the border. Orientation and origin are kept.
inline VoxelVolume resample_isotropic(const VoxelVolume& v, const Vec3& spacing) {
  for (double s : spacing)
    if (!(s > 0)) fail(Errc::DegenerateVolume, "target spacing must be positive");
  if (v.dims.x < 2 || v.dims.y < 2 || v.dims.z < 2)
    fail(Errc::DegenerateVolume, "every input dimension must be at least 2");

  const Dims out_dims{resampled_extent(v.dims.x, v.spacing[0], spacing[0]),
                      resampled_extent(v.dims.y, v.spacing[1], spacing[1]),
                      resampled_extent(v.dims.z, v.spacing[2], spacing[2])};
  if (out_dims == v.dims && spacing == v.spacing) return v;

  VoxelVolume out = v;
  out.dims = out_dims;
  out.spacing = spacing;
  out.dtype = ScalarType::F32;
  out.data.assign(out_dims.count(), 0.0f);

  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double ratio) {
    std::vector<Tap> t(n_out);
    const double last = static_cast<double>(n_in - 1);
    for (std::size_t i = 0; i < n_out; ++i) {
      const double src = std::min(static_cast<double>(i) * ratio, last);
      auto lo = static_cast<std::size_t>(std::floor(src));
      if (lo >= n_in - 1) lo = n_in - 2;
      t[i] = {lo, lo + 1, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto tx = taps(out_dims.x, v.dims.x, spacing[0] / v.spacing[0]);
  const auto ty = taps(out_dims.y, v.dims.y, spacing[1] / v.spacing[1]);
  const auto tz = taps(out_dims.z, v.dims.z, spacing[2] / v.spacing[2]);

  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  std::size_t o = 0;
  for (std::size_t z = 0; z < out_dims.z; ++z) {
    const auto& cz = tz[z];
    for (std::size_t y = 0; y < out_dims.y; ++y) {
      const auto& cy = ty[y];
      for (std::size_t x = 0; x < out_dims.x; ++x, ++o) {
        const auto& cx = tx[x];
        auto sample = [&](std::size_t yy, std::size_t zz) {
          return lerp(v.at(cx.lo, yy, zz), v.at(cx.hi, yy, zz), cx.t);
        };
        const double c0 = lerp(sample(cy.lo, cz.lo), sample(cy.hi, cz.lo), cy.t);
        const double c1 = lerp(sample(cy.lo, cz.hi), sample(cy.hi, cz.hi), cy.t);
        out.data[o] = static_cast<float>(lerp(c0, c1, cz.t));
      }
    }
  }
  return out;
}

/// Offset of output index 0 in input index space when centering `in` onto
/// `out`: the centers floor(in/2) and floor(out/2) coincide. Positive means
/// crop, negative means pad.
constexpr std::ptrdiff_t center_offset(std::size_t in, std::size_t out) {
  return static_cast<std::ptrdiff_t>(in / 2) - static_cast<std::ptrdiff_t>(out / 2);
}

/// Center crop / pad each axis to `dims`. Padding uses `fill`.
inline VoxelVolume normalize_grid(const VoxelVolume& v, Dims dims, float fill = -1000.0f) {
  if (dims.x == 0 || dims.y == 0 || dims.z == 0) fail(Errc::InvalidPlan, "target dims must be positive");
  if (dims == v.dims) return v;

  VoxelVolume out = v;
  out.dims = dims;
  out.data.assign(dims.count(), fill);
  const auto ox = center_offset(v.dims.x, dims.x), oy = center_offset(v.dims.y, dims.y),
             oz = center_offset(v.dims.z, dims.z);
  for (std::size_t z = 0; z < dims.z; ++z) {
    const auto sz = static_cast<std::ptrdiff_t>(z) + oz;
    if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(v.dims.z)) continue;
    for (std::size_t y = 0; y < dims.y; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y) + oy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(v.dims.y)) continue;
      const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
      const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(dims.x),
                                                         static_cast<std::ptrdiff_t>(v.dims.x) - ox);
      for (auto x = x0; x < x1; ++x)
        out.at(static_cast<std::size_t>(x), y, z) =
            v.at(static_cast<std::size_t>(x + ox), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
    }
  }
  for (int k = 0; k < 3; ++k) {
    const auto off = k == 0 ? ox : k == 1 ? oy : oz;
    for (int r = 0; r < 3; ++r) out.origin[r] += static_cast<double>(off) * v.spacing[k] * v.orientation.cols[k][r];
  }
  if (out.dtype != ScalarType::F32) out.dtype = narrowest_scalar_type(out.data);
  return out;
}

}  // namespace rave
