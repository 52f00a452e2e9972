#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "rave/windowing.hpp"
#include "support.hpp"

using namespace rave;

namespace {

// Piecewise form of the windowing law, written independently of the clamp.
double window_oracle(double v, double level, double width) {
  const double lo = level - width / 2, hi = level + width / 2;
  if (v <= lo) return 0;
  if (v >= hi) return 1;
  return (v - lo) / width;
}

double percentile_oracle(std::vector<double> sorted, double p) {
  std::sort(sorted.begin(), sorted.end());
  const double rank = p / 100 * (sorted.size() - 1);
  const auto i = static_cast<std::size_t>(rank);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (sorted[i + 1] - sorted[i]) * (rank - i);
}

}  // namespace

TEST(Window, LungExamples) {
  const WindowPreset lung{"lung", -600, 1500};
  EXPECT_FLOAT_EQ(window_value(-600, lung.lower(), lung.width), 0.5f);
  EXPECT_EQ(window_value(-1350, lung.lower(), lung.width), 0.0f);
  EXPECT_EQ(window_value(-3000, lung.lower(), lung.width), 0.0f);
  EXPECT_EQ(window_value(150, lung.lower(), lung.width), 1.0f);
  EXPECT_EQ(window_value(3000, lung.lower(), lung.width), 1.0f);
}

TEST(Window, ElevenDistinctPresets) {
  const auto p = default_ct_presets();
  ASSERT_EQ(p.size(), 11u);
  std::set<std::string> names;
  for (const auto& w : p) {
    names.insert(w.name);
    EXPECT_GT(w.width, 0);
  }
  EXPECT_EQ(names.size(), 11u);
}

TEST(Window, PresetsMatchOracle) {
  SplitMix rng(11);
  VoxelVolume v({17, 13, 9});
  for (auto& x : v.data) x = static_cast<float>(std::round(rng.uniform() * 5000 - 2048));
  const auto presets = default_ct_presets();
  const auto mc = apply_presets(v, presets);
  ASSERT_EQ(mc.channels, 11u);
  for (std::size_t c = 0; c < mc.channels; ++c) {
    const auto ch = mc.channel(c);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
      ASSERT_NEAR(ch[i], window_oracle(v.data[i], presets[c].level, presets[c].width), 1e-6);
      ASSERT_GE(ch[i], 0.0f);
      ASSERT_LE(ch[i], 1.0f);
    }
  }
}

TEST(Window, InvalidWidth) {
  VoxelVolume v({2, 2, 2});
  EXPECT_THROW(apply_presets(v, {{"bad", 0, 0}}), Error);
  EXPECT_THROW(apply_presets(v, {}), Error);
}

TEST(Percentile, UniformForeground) {
  // Values 0..1000; 0 is the minimum so the foreground is 1..1000.
  VoxelVolume v({7, 11, 13});
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i);
  const auto b = foreground_percentiles(v, {1, 99});
  EXPECT_NEAR(b.low, 10.99, 1e-9);
  EXPECT_NEAR(b.high, 990.01, 1e-9);
  const auto mc = apply_percentile_window(v, {1, 99});
  ASSERT_EQ(mc.channels, 1u);
  EXPECT_EQ(mc.values[0], 0.0f);
  EXPECT_EQ(mc.values[1000], 1.0f);
  EXPECT_NEAR(mc.values[500], (500 - 10.99) / (990.01 - 10.99), 1e-6);
}

TEST(Percentile, MatchesSortOracleOnRandomVolumes) {
  SplitMix rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    VoxelVolume v({1 + rng.below(20), 1 + rng.below(20), 2});
    for (auto& x : v.data) x = rng.below(4) == 0 ? 0.0f : static_cast<float>(rng.uniform() * 900);
    v.data[0] = 0;
    v.data[1] = 1000;
    std::vector<double> fg;
    for (float x : v.data)
      if (x > 0) fg.push_back(x);
    const double lo = rng.uniform() * 50, hi = 50 + rng.uniform() * 50;
    const auto b = foreground_percentiles(v, {lo, hi});
    EXPECT_NEAR(b.low, percentile_oracle(fg, lo), 1e-3);
    EXPECT_NEAR(b.high, percentile_oracle(fg, hi), 1e-3);
  }
}

TEST(Percentile, Errors) {
  VoxelVolume flat({3, 3, 3}, 4.0f);
  EXPECT_THROW(foreground_percentiles(flat, {1, 99}), Error);
  try {
    foreground_percentiles(flat, {1, 99});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyForeground);
  }
  VoxelVolume v({3, 3, 3});
  v.data[5] = 1;
  EXPECT_THROW(foreground_percentiles(v, {99, 1}), Error);
  EXPECT_THROW(foreground_percentiles(v, {-1, 50}), Error);
  // Single foreground voxel: degenerate window, voxel maps to 1.
  const auto mc = apply_percentile_window(v, {1, 99});
  EXPECT_EQ(mc.values[5], 1.0f);
  EXPECT_EQ(mc.values[0], 0.0f);
}
