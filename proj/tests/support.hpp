#pragma once

// Fixture builders shared by the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "rave/bytes.hpp"
#include "rave/dicom.hpp"
#include "rave/volume.hpp"

namespace rave::test {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rave") {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    SplitMix rng(static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^ ++counter ^
                 static_cast<std::uint64_t>(::getpid()) << 20);
    path_ = base / (tag + "-" + std::to_string(rng.next() & 0xffffffffu));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline float random_value(SplitMix& rng, ScalarType t) {
  switch (t) {
    case ScalarType::I16: return static_cast<float>(static_cast<int>(rng.below(65536)) - 32768);
    case ScalarType::U16: return static_cast<float>(rng.below(65536));
    case ScalarType::F32: {
      // Mix of ordinary, tiny, and large magnitudes; always finite.
      const auto k = rng.below(4);
      const double u = rng.uniform() * 2 - 1;
      if (k == 0) return static_cast<float>(u * 1e-30);
      if (k == 1) return static_cast<float>(u * 1e30);
      return static_cast<float>(u * 4000.0);
    }
  }
  return 0;
}

inline VoxelVolume random_volume(SplitMix& rng, Dims dims, ScalarType t) {
  VoxelVolume v(dims);
  v.dtype = t;
  for (auto& x : v.data) x = random_value(rng, t);
  v.spacing = {0.5 + rng.uniform(), 0.5 + rng.uniform(), 0.5 + 4 * rng.uniform()};
  v.origin = {rng.uniform() * 100 - 50, rng.uniform() * 100 - 50, rng.uniform() * 100 - 50};
  return v;
}

/// Smooth, slice-correlated CT-like phantom: nested ellipsoids with a gentle
/// gradient, integer HU.
inline VoxelVolume smooth_phantom(Dims d, double phase = 0) {
  VoxelVolume v(d);
  v.dtype = ScalarType::I16;
  v.modality = Modality::CtChest;
  const double cx = (d.x - 1) / 2.0, cy = (d.y - 1) / 2.0, cz = (d.z - 1) / 2.0;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) {
        const double dx = (x - cx) / (0.45 * d.x), dy = (y - cy) / (0.40 * d.y), dz = (z - cz) / (0.48 * d.z);
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
        double hu = -1000;
        if (r < 1) hu = 40 + 30 * std::sin(0.15 * x + phase) + 20 * std::cos(0.11 * y) + 0.5 * z;
        if (r < 0.35) hu = 400 + 100 * std::cos(0.05 * (x + y) + phase);
        v.at(x, y, z) = static_cast<float>(std::lround(hu));
      }
  return v;
}

/// Axial slice at height z of a series; payload filled by `value(x, y)`.
template <typename F>
SliceRecord make_slice(const std::string& series_uid, std::size_t index, double z, std::uint16_t rows, std::uint16_t cols,
                       F&& value) {
  SliceRecord s;
  s.sop_uid = series_uid + "." + std::to_string(index + 1);
  s.series_uid = series_uid;
  s.study_uid = "1.2.826.0.1.3680043.8.498.1";
  s.modality = "CT";
  s.series_description = "AXIAL 1.25";
  s.image_position = {-125.0, -125.0, z};
  s.image_orientation = {1, 0, 0, 0, 1, 0};
  s.pixel_spacing = {0.75, 0.75};
  s.slice_thickness = 1.25;
  s.rows = rows;
  s.cols = cols;
  s.rescale_slope = 1;
  s.rescale_intercept = -1024;
  s.pixel_payload.resize(std::size_t{rows} * cols);
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) s.pixel_payload[y * cols + x] = value(x, y);
  return s;
}

inline std::vector<SliceRecord> make_series(const std::string& uid, std::size_t n, double gap, std::uint16_t rows = 8,
                                            std::uint16_t cols = 8) {
  std::vector<SliceRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_slice(uid, i, static_cast<double>(i) * gap, rows, cols,
                             [&](std::size_t x, std::size_t y) { return static_cast<std::int32_t>(1000 + x + 10 * y + 100 * i); }));
  return out;
}

}  // namespace rave::test
