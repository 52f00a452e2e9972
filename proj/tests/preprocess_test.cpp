#include <gtest/gtest.h>

#include "rave/preprocess.hpp"
#include "support.hpp"

using namespace rave;

TEST(Resample, IdentityWhenSpacingMatches) {
  SplitMix rng(3);
  auto v = test::random_volume(rng, {5, 6, 7}, ScalarType::F32);
  v.spacing = {1, 1, 1};
  const auto out = resample_isotropic(v, {1, 1, 1});
  EXPECT_EQ(out.dims, v.dims);
  EXPECT_EQ(out.data, v.data);
}

TEST(Resample, ConstantStaysConstant) {
  VoxelVolume v({10, 12, 6}, 100.0f);
  v.spacing = {0.7, 1.3, 3.0};
  const auto out = resample_isotropic(v, {1, 1, 1});
  EXPECT_EQ(out.dims, (Dims{7, 16, 18}));
  for (float x : out.data) ASSERT_EQ(x, 100.0f);
  EXPECT_EQ(out.spacing, (Vec3{1, 1, 1}));
}

TEST(Resample, LinearRampIsReproduced) {
  // Trilinear interpolation of a linear function is exact, so the output
  // must equal the ramp evaluated at the (clamped) source coordinate.
  const Dims d{9, 4, 5};
  VoxelVolume v(d);
  v.spacing = {2.0, 1.0, 1.5};
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x) v.at(x, y, z) = static_cast<float>(x + 10 * y + 100 * z);
  const auto out = resample_isotropic(v, {1, 1, 1});
  ASSERT_EQ(out.dims, (Dims{18, 4, 8}));
  for (std::size_t z = 0; z < out.dims.z; ++z)
    for (std::size_t y = 0; y < out.dims.y; ++y)
      for (std::size_t x = 0; x < out.dims.x; ++x) {
        const double sx = std::min(x * 0.5, 8.0), sz = std::min(z / 1.5, 4.0);
        EXPECT_NEAR(out.at(x, y, z), sx + 10.0 * y + 100 * sz, 1e-4) << x << "," << y << "," << z;
      }
  // Midpoints between source samples are the averages.
  EXPECT_FLOAT_EQ(out.at(1, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(out.at(3, 0, 0), 1.5f);
}

TEST(Resample, Degenerate) {
  VoxelVolume v({1, 4, 4});
  EXPECT_THROW(resample_isotropic(v, {1, 1, 1}), Error);
  VoxelVolume w({4, 4, 4});
  EXPECT_THROW(resample_isotropic(w, {0, 1, 1}), Error);
}

TEST(NormalizeGrid, CropAndPadOffsets) {
  EXPECT_EQ(center_offset(300, 256), 22);
  EXPECT_EQ(center_offset(100, 128), -14);
  EXPECT_EQ(center_offset(1, 4), -2);

  // Every input voxel carries its linear index so the mapping is visible.
  const Dims in{300, 300, 100};
  VoxelVolume v(in);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);
  v.spacing = {0.8, 0.8, 2.0};
  const auto out = normalize_grid(v, {256, 256, 128}, -1000.0f);
  ASSERT_EQ(out.dims, (Dims{256, 256, 128}));
  std::size_t filled = 0;
  for (std::size_t z = 0; z < 128; ++z)
    for (std::size_t y = 0; y < 256; ++y)
      for (std::size_t x = 0; x < 256; ++x) {
        const long sz = static_cast<long>(z) - 14;
        if (sz < 0 || sz >= 100) {
          ++filled;
          ASSERT_EQ(out.at(x, y, z), -1000.0f);
        } else {
          ASSERT_EQ(out.at(x, y, z), static_cast<float>((x + 22) + 300 * ((y + 22) + 300 * static_cast<std::size_t>(sz))));
        }
      }
  EXPECT_EQ(filled, 256u * 256u * 28u);
  EXPECT_DOUBLE_EQ(out.origin[0], 22 * 0.8);
  EXPECT_DOUBLE_EQ(out.origin[2], -14 * 2.0);
}

TEST(NormalizeGrid, SingleVoxelLandsAtCenter) {
  VoxelVolume v({1, 1, 1}, 5.0f);
  const auto out = normalize_grid(v, {4, 4, 4}, -7.0f);
  std::size_t fills = 0;
  for (std::size_t i = 0; i < out.data.size(); ++i) fills += out.data[i] == -7.0f;
  EXPECT_EQ(fills, 63u);
  EXPECT_EQ(out.at(2, 2, 2), 5.0f);
}

TEST(NormalizeGrid, RoundTripWhenShapesMatch) {
  SplitMix rng(4);
  const auto v = test::random_volume(rng, {6, 5, 4}, ScalarType::I16);
  const auto out = normalize_grid(v, v.dims);
  EXPECT_EQ(out.data, v.data);
  // Pad then crop back restores the original.
  const auto big = normalize_grid(v, {10, 9, 8}, 0);
  const auto back = normalize_grid(big, v.dims);
  EXPECT_EQ(back.data, v.data);
  EXPECT_THROW(normalize_grid(v, {0, 1, 1}), Error);
}
