#pragma once

// Reduces an exam's series to the representative ones: one axial CT series,
// or the T1 fat-sat / T2 fat-sat / peak post-contrast triple for breast MRI.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rave/bytes.hpp"
#include "rave/dicom.hpp"
#include "rave/error.hpp"

namespace rave {

enum class Plane { Axial, Coronal, Sagittal, Oblique };

constexpr std::string_view plane_name(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
    case Plane::Oblique: return "oblique";
  }
  return "oblique";
}

/// Classifies a slice plane by the dominant axis of its normal. Within
/// `max_angle_deg` of patient z is axial, of y coronal, of x sagittal.
inline Plane classify_plane(const std::array<double, 6>& orientation, double max_angle_deg = 15.0) {
  const Vec3 r{orientation[0], orientation[1], orientation[2]};
  const Vec3 c{orientation[3], orientation[4], orientation[5]};
  const Vec3 n = cross(r, c);
  const double len = norm(n);
  if (!(len > 0)) return Plane::Oblique;
  const double cos_limit = std::cos(max_angle_deg * std::numbers::pi / 180.0);
  const double ax = std::abs(n[0]) / len, ay = std::abs(n[1]) / len, az = std::abs(n[2]) / len;
  if (az >= cos_limit) return Plane::Axial;
  if (ay >= cos_limit) return Plane::Coronal;
  if (ax >= cos_limit) return Plane::Sagittal;
  return Plane::Oblique;
}

struct SeriesSummary {
  std::string series_uid;
  std::optional<Timestamp> acquisition_time;
  Plane plane = Plane::Oblique;
  double slice_thickness = 1;
  std::size_t slice_count = 1;
  std::string description;

  bool operator==(const SeriesSummary&) const = default;
};

/// Groups slices by series UID into summaries, ordered by UID. The series
/// time is the earliest slice acquisition time.
inline std::vector<SeriesSummary> summarize_series(const std::vector<SliceRecord>& slices,
                                                   double max_angle_deg = 15.0) {
  std::map<std::string, SeriesSummary> by_uid;
  for (const auto& s : slices) {
    auto [it, fresh] = by_uid.try_emplace(s.series_uid);
    auto& sum = it->second;
    if (fresh) {
      sum.series_uid = s.series_uid;
      sum.acquisition_time = s.acquisition_time;
      sum.plane = classify_plane(s.image_orientation, max_angle_deg);
      sum.slice_thickness = s.slice_thickness;
      sum.slice_count = 0;
      sum.description = s.series_description;
    } else if (s.acquisition_time && (!sum.acquisition_time || *s.acquisition_time < *sum.acquisition_time)) {
      sum.acquisition_time = s.acquisition_time;
    }
    ++sum.slice_count;
  }
  std::vector<SeriesSummary> out;
  for (auto& [_, s] : by_uid) out.push_back(std::move(s));
  return out;
}

struct CtSelectOptions {
  /// 0 groups on the exact timestamp; >0 chains series whose times fall
  /// within this many seconds of the previous member.
  double time_group_window_s = 0;
};

struct CtSelection {
  SeriesSummary selected;
  std::size_t groups = 0;
  std::size_t axial_candidates = 0;
  std::vector<std::string> tied;  // series at the minimal thickness, by UID
};

namespace detail {

inline std::vector<std::vector<const SeriesSummary*>> group_by_time(const std::vector<SeriesSummary>& series,
                                                                    double window_s) {
  std::vector<const SeriesSummary*> timed, untimed;
  for (const auto& s : series) (s.acquisition_time ? timed : untimed).push_back(&s);
  std::sort(timed.begin(), timed.end(), [](auto* a, auto* b) {
    if (a->acquisition_time != b->acquisition_time) return *a->acquisition_time < *b->acquisition_time;
    return a->series_uid < b->series_uid;
  });
  std::vector<std::vector<const SeriesSummary*>> groups;
  const auto window_us = static_cast<std::int64_t>(std::llround(window_s * 1e6));
  for (auto* s : timed) {
    if (!groups.empty()) {
      const auto prev = groups.back().back()->acquisition_time->micros;
      if (s->acquisition_time->micros - prev <= window_us) {
        groups.back().push_back(s);
        continue;
      }
    }
    groups.push_back({s});
  }
  if (!untimed.empty()) {
    std::sort(untimed.begin(), untimed.end(), [](auto* a, auto* b) { return a->series_uid < b->series_uid; });
    groups.push_back(std::move(untimed));
  }
  return groups;
}

}  // namespace detail

/// Picks one axial series: minimal slice thickness, remaining ties broken by
/// a seeded hash of the series UID. Throws NoAxialSeries when none qualifies.
inline CtSelection select_ct_series_detailed(const std::vector<SeriesSummary>& series, std::uint64_t seed,
                                             const CtSelectOptions& opt = {}) {
  if (series.empty()) fail(Errc::NoAxialSeries, "exam has no series");
  const auto groups = detail::group_by_time(series, opt.time_group_window_s);

  // Each acquisition-time group contributes its thinnest axial series.
  std::vector<const SeriesSummary*> survivors;
  std::size_t axial = 0;
  for (const auto& g : groups) {
    double best = std::numeric_limits<double>::infinity();
    for (auto* s : g)
      if (s->plane == Plane::Axial) {
        ++axial;
        best = std::min(best, s->slice_thickness);
      }
    for (auto* s : g)
      if (s->plane == Plane::Axial && s->slice_thickness == best) survivors.push_back(s);
  }
  if (survivors.empty()) fail(Errc::NoAxialSeries, "none of " + std::to_string(series.size()) + " series is axial");

  double best = std::numeric_limits<double>::infinity();
  for (auto* s : survivors) best = std::min(best, s->slice_thickness);
  std::vector<const SeriesSummary*> tied;
  for (auto* s : survivors)
    if (s->slice_thickness == best) tied.push_back(s);

  const auto* pick = *std::min_element(tied.begin(), tied.end(), [&](auto* a, auto* b) {
    const auto ka = seeded_key(seed, a->series_uid), kb = seeded_key(seed, b->series_uid);
    if (ka != kb) return ka < kb;
    return a->series_uid < b->series_uid;
  });

  CtSelection out{*pick, groups.size(), axial, {}};
  for (auto* s : tied) out.tied.push_back(s->series_uid);
  std::sort(out.tied.begin(), out.tied.end());
  return out;
}

inline SeriesSummary select_ct_series(const std::vector<SeriesSummary>& series, std::uint64_t seed,
                                      const CtSelectOptions& opt = {}) {
  return select_ct_series_detailed(series, seed, opt).selected;
}

struct MriRole {
  std::string name;
  std::string pattern;  // ECMAScript regex, matched case-insensitively
};

/// Ordered role patterns. A series claimed by an earlier role is not offered
/// to later ones.
struct MriRules {
  std::vector<MriRole> roles{
      {"t1_fatsat", R"(t1.*(\bfs\b|fat[ _-]?sat|fat[ _-]?suppress|\bfatsat))"},
      {"t2_fatsat", R"(t2.*(\bfs\b|fat[ _-]?sat|fat[ _-]?suppress|\bfatsat|stir))"},
      {"peak_contrast", R"(\bpost\b|\bpost[ _-]?\d|\+c\b|contrast|\bdyn)"},
  };
};

struct MriSelection {
  std::string role;
  SeriesSummary series;
};

/// One series per role; multiple matches resolve to the earliest acquisition
/// time (untimed series last, then by UID).
inline std::vector<MriSelection> select_mri_series(const std::vector<SeriesSummary>& series, const MriRules& rules) {
  std::vector<bool> claimed(series.size(), false);
  std::vector<MriSelection> out;
  std::vector<std::string> missing;
  for (const auto& role : rules.roles) {
    std::regex re;
    try {
      re = std::regex(role.pattern, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      fail(Errc::InvalidConfig, "role " + role.name + " has invalid pattern: " + e.what());
    }
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < series.size(); ++i) {
      if (claimed[i] || !std::regex_search(series[i].description, re)) continue;
      if (!best) {
        best = i;
        continue;
      }
      const auto& a = series[i];
      const auto& b = series[*best];
      const bool earlier = a.acquisition_time && (!b.acquisition_time || *a.acquisition_time < *b.acquisition_time ||
                                                  (*a.acquisition_time == *b.acquisition_time && a.series_uid < b.series_uid));
      const bool both_untimed = !a.acquisition_time && !b.acquisition_time && a.series_uid < b.series_uid;
      if (earlier || both_untimed) best = i;
    }
    if (!best) {
      missing.push_back(role.name);
      continue;
    }
    claimed[*best] = true;
    out.push_back({role.name, series[*best]});
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    fail(Errc::RoleUnmatched, names);
  }
  return out;
}

inline nlohmann::json series_json(const SeriesSummary& s) {
  nlohmann::json j{{"series_uid", s.series_uid},
                   {"plane", plane_name(s.plane)},
                   {"slice_thickness", s.slice_thickness},
                   {"slice_count", s.slice_count},
                   {"description", s.description}};
  if (s.acquisition_time)
    j["acquisition_time_us"] = s.acquisition_time->micros;
  else
    j["acquisition_time_us"] = nullptr;
  return j;
}

}  // namespace rave
