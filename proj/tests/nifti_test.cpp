#include <gtest/gtest.h>

#include "rave/nifti.hpp"
#include "support.hpp"

using namespace rave;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::IoError;
}

// Header fields are float32 on disk; fixtures use float-exact geometry.
VoxelVolume float_exact(VoxelVolume v) {
  for (auto& s : v.spacing) s = static_cast<float>(s);
  for (auto& o : v.origin) o = static_cast<float>(o);
  return v;
}

}  // namespace

TEST(Nifti, Roundtrip4x4x4) {
  SplitMix rng(1);
  for (auto t : {ScalarType::I16, ScalarType::U16, ScalarType::F32}) {
    const auto v = float_exact(test::random_volume(rng, {4, 4, 4}, t));
    const auto back = parse_nifti(write_nifti(v));
    EXPECT_EQ(back.dims, v.dims);
    EXPECT_EQ(back.spacing, v.spacing);
    EXPECT_EQ(back.origin, v.origin);
    EXPECT_EQ(back.orientation, v.orientation);
    ASSERT_EQ(back.data.size(), v.data.size());
    EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4), 0);
    if (t != ScalarType::F32) {
      EXPECT_EQ(back.dtype, narrowest_scalar_type(v.data));
    } else {
      EXPECT_EQ(back.dtype, ScalarType::F32);
    }
  }
}

TEST(Nifti, SignedPermutationOrientationRoundtrips) {
  VoxelVolume v({3, 2, 2}, 7.0f);
  v.dtype = ScalarType::I16;
  v.spacing = {0.5, 2.0, 3.0};
  v.orientation.cols = {Vec3{0, -1, 0}, Vec3{1, 0, 0}, Vec3{0, 0, -1}};
  const auto back = parse_nifti(write_nifti(v));
  EXPECT_EQ(back.orientation, v.orientation);
  EXPECT_EQ(back.spacing, v.spacing);
}

TEST(Nifti, ScaleApplied) {
  VoxelVolume v({2, 2, 2}, 3.0f);
  v.dtype = ScalarType::I16;
  auto bytes = write_nifti(v);
  const float slope = 2, inter = 1;
  std::memcpy(bytes.data() + 112, &slope, 4);
  std::memcpy(bytes.data() + 116, &inter, 4);
  const auto back = parse_nifti(bytes);
  for (float x : back.data) EXPECT_EQ(x, 7.0f);
  EXPECT_EQ(back.dtype, ScalarType::F32);
  // scl_slope == 0 means "no scaling".
  const float zero = 0;
  std::memcpy(bytes.data() + 112, &zero, 4);
  for (float x : parse_nifti(bytes).data) EXPECT_EQ(x, 3.0f);
}

TEST(Nifti, Rejections) {
  VoxelVolume v({2, 2, 2}, 1.0f);
  v.dtype = ScalarType::I16;
  const auto good = write_nifti(v);

  auto zero_dim = good;
  const std::int16_t z = 0;
  std::memcpy(zero_dim.data() + 44, &z, 2);
  EXPECT_EQ(code_of([&] { parse_nifti(zero_dim); }), Errc::BadMagic);

  auto magic = good;
  magic[345] = 'x';
  EXPECT_EQ(code_of([&] { parse_nifti(magic); }), Errc::BadMagic);

  auto size = good;
  size[0] = 0;
  EXPECT_EQ(code_of([&] { parse_nifti(size); }), Errc::BadMagic);

  auto dtype = good;
  const std::int16_t complex64 = 32;
  std::memcpy(dtype.data() + 70, &complex64, 2);
  EXPECT_EQ(code_of([&] { parse_nifti(dtype); }), Errc::UnsupportedDatatype);

  auto four_d = good;
  const std::int16_t dims4[2] = {4, 2};
  std::memcpy(four_d.data() + 40, &dims4[0], 2);
  std::memcpy(four_d.data() + 48, &dims4[1], 2);
  EXPECT_EQ(code_of([&] { parse_nifti(four_d); }), Errc::UnsupportedDatatype);

  auto truncated = good;
  truncated.resize(truncated.size() - 1);
  EXPECT_EQ(code_of([&] { parse_nifti(truncated); }), Errc::TruncatedPayload);
}

TEST(Nifti, BigEndianAndNarrowTypes) {
  // Hand-built big-endian uint8 volume 2x1x1 with values {5, 250}.
  Bytes b(354, 0);
  auto put_be16 = [&](std::size_t off, std::uint16_t x) {
    b[off] = static_cast<std::uint8_t>(x >> 8);
    b[off + 1] = static_cast<std::uint8_t>(x);
  };
  auto put_be32 = [&](std::size_t off, std::uint32_t x) {
    for (int k = 0; k < 4; ++k) b[off + k] = static_cast<std::uint8_t>(x >> (24 - 8 * k));
  };
  put_be32(0, 348);
  put_be16(40, 3);
  put_be16(42, 2);
  put_be16(44, 1);
  put_be16(46, 1);
  put_be16(70, 2);
  put_be16(72, 8);
  put_be32(80, std::bit_cast<std::uint32_t>(1.5f));
  put_be32(84, std::bit_cast<std::uint32_t>(1.5f));
  put_be32(88, std::bit_cast<std::uint32_t>(2.5f));
  put_be32(108, std::bit_cast<std::uint32_t>(352.0f));
  std::memcpy(b.data() + 344, "n+1\0", 4);
  b[352] = 5;
  b[353] = 250;
  const auto v = parse_nifti(b);
  EXPECT_EQ(v.dims, (Dims{2, 1, 1}));
  EXPECT_EQ(v.data, (std::vector<float>{5, 250}));
  EXPECT_EQ(v.spacing, (Vec3{1.5, 1.5, 2.5}));
  EXPECT_EQ(v.dtype, ScalarType::I16);
}

TEST(Nifti, FuzzRoundtripBitExact) {
  SplitMix rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const Dims d{1 + rng.below(64), 1 + rng.below(64), 1 + rng.below(16)};
    const auto t = static_cast<ScalarType>(rng.below(3));
    const auto v = float_exact(test::random_volume(rng, d, t));
    const auto back = parse_nifti(write_nifti(v));
    ASSERT_EQ(back.dims, d);
    ASSERT_EQ(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4), 0) << "trial " << trial;
  }
}
