#pragma once

// Intensity windowing: fixed level/width presets for CT, foreground
// percentile windows for MRI. Each window yields one [0,1] channel.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rave/error.hpp"
#include "rave/volume.hpp"

namespace rave {

struct WindowPreset {
  std::string name;
  double level = 0;  // HU
  double width = 1;  // HU, > 0

  [[nodiscard]] double lower() const { return level - width / 2; }
  [[nodiscard]] double upper() const { return level + width / 2; }
  bool operator==(const WindowPreset&) const = default;
};

struct PercentileWindow {
  double low_pct = 1;
  double high_pct = 99;
  bool operator==(const PercentileWindow&) const = default;
};

/// Affine clamp-rescale of [lower, lower + width] onto [0, 1].
inline float window_value(double value, double lower, double width) {
  return static_cast<float>(std::clamp((value - lower) / width, 0.0, 1.0));
}

inline void validate(const WindowPreset& w) {
  if (!(w.width > 0) || !std::isfinite(w.level)) fail(Errc::InvalidPlan, "window '" + w.name + "' needs width > 0");
}

inline void validate(const PercentileWindow& p) {
  if (!(p.low_pct >= 0 && p.low_pct < 100 && p.high_pct > p.low_pct && p.high_pct <= 100))
    fail(Errc::InvalidPlan, "percentile window needs 0 <= low < high <= 100");
}

/// The eleven CT presets shipped by default (level, width in HU).
inline std::vector<WindowPreset> default_ct_presets() {
  return {
      {"lung", -600, 1500},       {"soft_tissue", 40, 400},  {"mediastinum", 50, 350},
      {"liver", 60, 160},         {"bone", 400, 1800},       {"brain", 40, 80},
      {"subdural", 75, 215},      {"stroke", 40, 40},        {"wide_full", 1000, 4000},
      {"wide_soft", 0, 2000},     {"wide_dense", 1500, 3000},
  };
}

/// Channel-major stack of same-shaped [0,1] volumes.
struct MultiChannelVolume {
  Dims dims;
  std::size_t channels = 0;
  std::vector<float> values;  // values[c * dims.count() + voxel]

  [[nodiscard]] std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(values).subspan(c * dims.count(), dims.count());
  }
};

/// Percentile with linear interpolation between closest ranks
/// (rank = p/100 * (n-1)). Reorders `values`.
inline double percentile_inplace(std::vector<float>& values, double pct) {
  if (values.empty()) fail(Errc::EmptyForeground, "percentile of empty set");
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (frac == 0 || lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (b - a) * frac;
}

struct PercentileBounds {
  double low, high;
};

/// Foreground is every voxel strictly above the volume minimum.
inline PercentileBounds foreground_percentiles(const VoxelVolume& v, const PercentileWindow& p) {
  validate(p);
  if (v.data.empty()) fail(Errc::EmptyForeground, "empty volume");
  const float mn = *std::min_element(v.data.begin(), v.data.end());
  std::vector<float> fg;
  fg.reserve(v.data.size());
  for (float x : v.data)
    if (x > mn) fg.push_back(x);
  if (fg.empty()) fail(Errc::EmptyForeground, "volume is constant; no voxel above the minimum");
  const double lo = percentile_inplace(fg, p.low_pct);
  const double hi = percentile_inplace(fg, p.high_pct);
  return {lo, hi};
}

inline MultiChannelVolume apply_presets(const VoxelVolume& v, const std::vector<WindowPreset>& presets) {
  if (presets.empty()) fail(Errc::InvalidPlan, "CT plan needs at least one window preset");
  MultiChannelVolume out{v.dims, presets.size(), std::vector<float>(presets.size() * v.data.size())};
  for (std::size_t c = 0; c < presets.size(); ++c) {
    validate(presets[c]);
    const double lower = presets[c].lower(), width = presets[c].width;
    float* dst = out.values.data() + c * v.data.size();
    for (std::size_t i = 0; i < v.data.size(); ++i) dst[i] = window_value(v.data[i], lower, width);
  }
  return out;
}

/// Single channel spanning the foreground percentiles. A degenerate window
/// (high == low) maps values >= high to 1 and the rest to 0.
inline MultiChannelVolume apply_percentile_window(const VoxelVolume& v, const PercentileWindow& p) {
  const auto b = foreground_percentiles(v, p);
  MultiChannelVolume out{v.dims, 1, std::vector<float>(v.data.size())};
  const double width = b.high - b.low;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.values[i] = width > 0 ? window_value(v.data[i], b.low, width) : (v.data[i] >= b.high ? 1.0f : 0.0f);
  return out;
}

using WindowSpec = std::variant<std::vector<WindowPreset>, PercentileWindow>;

inline std::size_t window_count(const WindowSpec& w) {
  return std::visit(
      [](const auto& x) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, PercentileWindow>)
          return 1;
        else
          return x.size();
      },
      w);
}

}  // namespace rave
