#pragma once

// Reader and writer for the DICOM subset the pipeline ingests: Part-10 files,
// Explicit VR Little Endian, single-frame, uncompressed monochrome pixels.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rave/bytes.hpp"
#include "rave/error.hpp"
#include "rave/volume.hpp"

namespace rave {

/// Acquisition instant, microseconds since 0000-03-01 on the proleptic
/// Gregorian calendar (DA+TM). A TM without DA counts from day zero.
struct Timestamp {
  std::int64_t micros = 0;
  auto operator<=>(const Timestamp&) const = default;
};

namespace detail {

constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe);
}

constexpr void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\0')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.remove_suffix(1);
  return s;
}

inline int parse_digits(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return -1;
  return v;
}

}  // namespace detail

/// Parses DICOM DA ("YYYYMMDD", may be empty) and TM ("HH[MM[SS[.F{1,6}]]]",
/// legacy colons tolerated). Returns nullopt when neither is usable.
inline std::optional<Timestamp> parse_dicom_timestamp(std::string_view da, std::string_view tm) {
  da = detail::trim(da);
  tm = detail::trim(tm);
  if (tm.empty()) return std::nullopt;
  std::int64_t days = 0;
  if (!da.empty()) {
    if (da.size() != 8) return std::nullopt;
    const int y = detail::parse_digits(da.substr(0, 4)), m = detail::parse_digits(da.substr(4, 2)),
              d = detail::parse_digits(da.substr(6, 2));
    if (y < 0 || m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
    days = detail::days_from_civil(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
  }
  std::string clean;
  for (char c : tm)
    if (c != ':') clean.push_back(c);
  std::string_view t = clean;
  std::string_view frac;
  if (auto dotpos = t.find('.'); dotpos != std::string_view::npos) {
    frac = t.substr(dotpos + 1);
    t = t.substr(0, dotpos);
  }
  if (t.size() < 2 || t.size() > 6 || t.size() % 2 != 0 || frac.size() > 6) return std::nullopt;
  int hh = detail::parse_digits(t.substr(0, 2));
  int mm = t.size() >= 4 ? detail::parse_digits(t.substr(2, 2)) : 0;
  int ss = t.size() >= 6 ? detail::parse_digits(t.substr(4, 2)) : 0;
  if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || ss < 0 || ss > 60) return std::nullopt;
  std::int64_t us = 0;
  if (!frac.empty()) {
    const int f = detail::parse_digits(frac);
    if (f < 0) return std::nullopt;
    us = f;
    for (std::size_t i = frac.size(); i < 6; ++i) us *= 10;
  }
  return Timestamp{((days * 24 + hh) * 60 + mm) * 60'000'000ll + ss * 1'000'000ll + us};
}

/// Inverse of parse_dicom_timestamp: {DA, TM} with a six-digit fraction.
inline std::pair<std::string, std::string> format_dicom_timestamp(Timestamp ts) {
  const std::int64_t per_day = 86'400'000'000ll;
  std::int64_t days = ts.micros / per_day;
  std::int64_t rem = ts.micros % per_day;
  if (rem < 0) {
    rem += per_day;
    --days;
  }
  std::int64_t y;
  unsigned m, d;
  detail::civil_from_days(days, y, m, d);
  const auto secs = rem / 1'000'000, us = rem % 1'000'000;
  char da[16], tm[32];
  std::snprintf(da, sizeof da, "%04lld%02u%02u", static_cast<long long>(y), m, d);
  std::snprintf(tm, sizeof tm, "%02lld%02lld%02lld.%06lld", static_cast<long long>(secs / 3600),
                static_cast<long long>((secs / 60) % 60), static_cast<long long>(secs % 60),
                static_cast<long long>(us));
  return {da, tm};
}

/// One decoded DICOM image slice. `pixel_spacing` is {row spacing, column
/// spacing} as stored in (0028,0030); the payload is row-major rows x cols of
/// stored (uncalibrated) values.
struct SliceRecord {
  std::string sop_uid;
  std::string series_uid;
  std::string study_uid;
  std::string modality;            // (0008,0060), e.g. "CT"
  std::string series_description;  // (0008,103E)
  std::optional<Timestamp> acquisition_time;
  Vec3 image_position{0, 0, 0};
  std::array<double, 6> image_orientation{1, 0, 0, 0, 1, 0};
  std::array<double, 2> pixel_spacing{1, 1};
  double slice_thickness = 1;
  std::uint32_t rows = 0, cols = 0;
  double rescale_slope = 1;
  double rescale_intercept = 0;
  std::vector<std::int32_t> pixel_payload;

  [[nodiscard]] Vec3 row_direction() const {
    return {image_orientation[0], image_orientation[1], image_orientation[2]};
  }
  [[nodiscard]] Vec3 column_direction() const {
    return {image_orientation[3], image_orientation[4], image_orientation[5]};
  }
  [[nodiscard]] Vec3 normal() const { return cross(row_direction(), column_direction()); }

  bool operator==(const SliceRecord&) const = default;
};

namespace dicom {

inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

inline std::string tag_name(std::uint32_t t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "(%04X,%04X)", t >> 16, t & 0xFFFF);
  return buf;
}

namespace tags {
inline constexpr auto TransferSyntax = tag(0x0002, 0x0010);
inline constexpr auto AcquisitionDate = tag(0x0008, 0x0022);
inline constexpr auto AcquisitionTime = tag(0x0008, 0x0032);
inline constexpr auto SopClassUid = tag(0x0008, 0x0016);
inline constexpr auto SopInstanceUid = tag(0x0008, 0x0018);
inline constexpr auto Modality = tag(0x0008, 0x0060);
inline constexpr auto SeriesDescription = tag(0x0008, 0x103E);
inline constexpr auto SliceThickness = tag(0x0018, 0x0050);
inline constexpr auto StudyInstanceUid = tag(0x0020, 0x000D);
inline constexpr auto SeriesInstanceUid = tag(0x0020, 0x000E);
inline constexpr auto ImagePosition = tag(0x0020, 0x0032);
inline constexpr auto ImageOrientation = tag(0x0020, 0x0037);
inline constexpr auto SamplesPerPixel = tag(0x0028, 0x0002);
inline constexpr auto Rows = tag(0x0028, 0x0010);
inline constexpr auto Columns = tag(0x0028, 0x0011);
inline constexpr auto PixelSpacing = tag(0x0028, 0x0030);
inline constexpr auto BitsAllocated = tag(0x0028, 0x0100);
inline constexpr auto BitsStored = tag(0x0028, 0x0101);
inline constexpr auto PixelRepresentation = tag(0x0028, 0x0103);
inline constexpr auto RescaleIntercept = tag(0x0028, 0x1052);
inline constexpr auto RescaleSlope = tag(0x0028, 0x1053);
inline constexpr auto PixelData = tag(0x7FE0, 0x0010);
inline constexpr auto Item = tag(0xFFFE, 0xE000);
inline constexpr auto ItemDelimiter = tag(0xFFFE, 0xE00D);
inline constexpr auto SequenceDelimiter = tag(0xFFFE, 0xE0DD);
}  // namespace tags

constexpr bool has_long_length(std::string_view vr) {
  constexpr std::string_view kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                        "UC", "UR", "UT", "UN", "SV", "UV"};
  return std::find(std::begin(kLong), std::end(kLong), vr) != std::end(kLong);
}

namespace detail {

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

struct Element {
  std::uint32_t tag;
  std::string vr;
  ByteView value;
};

void skip_undefined_sequence(ByteReader& r);

inline void skip_undefined_item(ByteReader& r) {
  for (;;) {
    const auto g = r.get<std::uint16_t>(), e = r.get<std::uint16_t>();
    const auto t = tag(g, e);
    if (t == tags::ItemDelimiter) {
      r.get<std::uint32_t>();
      return;
    }
    const std::string vr{reinterpret_cast<const char*>(r.take(2).data()), 2};
    std::uint32_t len;
    if (has_long_length(vr)) {
      r.skip(2);
      len = r.get<std::uint32_t>();
    } else {
      len = r.get<std::uint16_t>();
    }
    if (len == kUndefinedLength)
      skip_undefined_sequence(r);
    else
      r.skip(len);
  }
}

inline void skip_undefined_sequence(ByteReader& r) {
  for (;;) {
    const auto g = r.get<std::uint16_t>(), e = r.get<std::uint16_t>();
    const auto t = tag(g, e);
    const auto len = r.get<std::uint32_t>();
    if (t == tags::SequenceDelimiter) return;
    if (t != tags::Item) fail(Errc::MalformedPreamble, "unexpected tag " + tag_name(t) + " inside sequence");
    if (len == kUndefinedLength)
      skip_undefined_item(r);
    else
      r.skip(len);
  }
}

inline Element read_element(ByteReader& r) {
  Element el;
  const auto g = r.get<std::uint16_t>(), e = r.get<std::uint16_t>();
  el.tag = tag(g, e);
  el.vr.assign(reinterpret_cast<const char*>(r.take(2).data()), 2);
  std::uint32_t len;
  if (has_long_length(el.vr)) {
    r.skip(2);
    len = r.get<std::uint32_t>();
  } else {
    len = r.get<std::uint16_t>();
  }
  if (len == kUndefinedLength) {
    if (el.tag == tags::PixelData)
      fail(Errc::UnsupportedTransferSyntax, "encapsulated pixel data in " + tag_name(el.tag));
    if (el.vr != "SQ" && el.vr != "UN")
      fail(Errc::MalformedPreamble, "undefined length on non-sequence " + tag_name(el.tag));
    skip_undefined_sequence(r);
    return el;
  }
  el.value = r.take(len);
  return el;
}

inline std::string as_string(ByteView v) {
  return std::string(::rave::detail::trim(std::string_view(reinterpret_cast<const char*>(v.data()), v.size())));
}

inline std::vector<double> as_decimals(ByteView v, std::uint32_t t) {
  std::vector<double> out;
  const auto s = as_string(v);
  std::string_view rest = s;
  while (true) {
    const auto cut = rest.find('\\');
    auto part = ::rave::detail::trim(rest.substr(0, cut));
    double d = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), d);
    if (ec != std::errc{} || p != part.data() + part.size())
      fail(Errc::MalformedPreamble, "bad decimal string in " + tag_name(t) + ": '" + std::string(part) + "'");
    out.push_back(d);
    if (cut == std::string_view::npos) break;
    rest = rest.substr(cut + 1);
  }
  return out;
}

inline std::uint16_t as_us(ByteView v, std::uint32_t t) {
  if (v.size() < 2) fail(Errc::MalformedPreamble, "short US value in " + tag_name(t));
  std::uint16_t out;
  std::memcpy(&out, v.data(), 2);
  return out;
}

inline std::string format_decimal(double d) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, p);
}

inline std::string join_decimals(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += '\\';
    out += format_decimal(values[i]);
  }
  return out;
}

inline void put_element(ByteWriter& w, std::uint32_t t, std::string_view vr, ByteView value) {
  w.put<std::uint16_t>(static_cast<std::uint16_t>(t >> 16));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(t & 0xFFFF));
  w.put_bytes(vr);
  if (has_long_length(vr)) {
    w.put<std::uint16_t>(0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(value.size()));
  } else {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(value.size()));
  }
  w.put_bytes(value);
}

inline void put_string(ByteWriter& w, std::uint32_t t, std::string_view vr, std::string s) {
  if (s.size() % 2) s.push_back(vr == "UI" ? '\0' : ' ');
  put_element(w, t, vr, ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline void put_us(ByteWriter& w, std::uint32_t t, std::uint16_t v) {
  std::uint8_t b[2];
  std::memcpy(b, &v, 2);
  put_element(w, t, "US", b);
}

}  // namespace detail
}  // namespace dicom

/// Parses one Part-10 file. Stored pixel values are kept raw; calibration
/// (value * slope + intercept) happens in assemble_volume.
inline SliceRecord parse_dicom_slice(ByteView bytes) {
  using namespace dicom;
  using dicom::detail::Element;
  if (bytes.size() < 132 || std::string_view(reinterpret_cast<const char*>(bytes.data()) + 128, 4) != "DICM")
    fail(Errc::MalformedPreamble, "missing 128-byte preamble and DICM prefix");

  ByteReader r(bytes, Errc::TruncatedPayload);
  r.seek(132);

  std::string transfer_syntax;
  bool have_ts = false;
  std::map<std::uint32_t, Element> found;
  bool checked_ts = false;
  auto check_ts = [&] {
    if (!have_ts) fail(Errc::MissingRequiredAttribute, tag_name(tags::TransferSyntax) + " TransferSyntaxUID");
    if (transfer_syntax != kExplicitVrLittleEndian)
      fail(Errc::UnsupportedTransferSyntax, tag_name(tags::TransferSyntax) + " = " + transfer_syntax);
    checked_ts = true;
  };
  while (!r.at_end()) {
    if (!checked_ts && r.remaining() >= 2 && (bytes[r.pos()] | (bytes[r.pos() + 1] << 8)) != 0x0002) check_ts();
    auto el = dicom::detail::read_element(r);
    if (el.tag == tags::TransferSyntax) {
      transfer_syntax = dicom::detail::as_string(el.value);
      have_ts = true;
    }
    if ((el.tag >> 16) == 0x0002) continue;
    found.emplace(el.tag, std::move(el));
  }
  if (!checked_ts) check_ts();

  auto require = [&](std::uint32_t t, const char* name) -> ByteView {
    auto it = found.find(t);
    if (it == found.end()) fail(Errc::MissingRequiredAttribute, tag_name(t) + " " + name);
    return it->second.value;
  };
  auto optional = [&](std::uint32_t t) -> std::optional<ByteView> {
    auto it = found.find(t);
    if (it == found.end()) return std::nullopt;
    return it->second.value;
  };
  auto decimals = [&](std::uint32_t t, const char* name, std::size_t n) {
    auto v = dicom::detail::as_decimals(require(t, name), t);
    if (v.size() != n)
      fail(Errc::MalformedPreamble, tag_name(t) + " expects " + std::to_string(n) + " values, got " +
                                        std::to_string(v.size()));
    return v;
  };

  SliceRecord s;
  s.sop_uid = dicom::detail::as_string(require(tags::SopInstanceUid, "SOPInstanceUID"));
  s.series_uid = dicom::detail::as_string(require(tags::SeriesInstanceUid, "SeriesInstanceUID"));
  if (auto v = optional(tags::StudyInstanceUid)) s.study_uid = dicom::detail::as_string(*v);
  if (auto v = optional(tags::Modality)) s.modality = dicom::detail::as_string(*v);
  if (auto v = optional(tags::SeriesDescription)) s.series_description = dicom::detail::as_string(*v);
  if (auto tm = optional(tags::AcquisitionTime)) {
    std::string da;
    if (auto d = optional(tags::AcquisitionDate)) da = dicom::detail::as_string(*d);
    s.acquisition_time = parse_dicom_timestamp(da, dicom::detail::as_string(*tm));
  }

  s.rows = dicom::detail::as_us(require(tags::Rows, "Rows"), tags::Rows);
  s.cols = dicom::detail::as_us(require(tags::Columns, "Columns"), tags::Columns);
  if (s.rows == 0 || s.cols == 0) fail(Errc::MalformedPreamble, "zero Rows or Columns");

  const auto ps = decimals(tags::PixelSpacing, "PixelSpacing", 2);
  s.pixel_spacing = {ps[0], ps[1]};
  if (!(ps[0] > 0 && ps[1] > 0)) fail(Errc::MalformedPreamble, tag_name(tags::PixelSpacing) + " must be positive");
  const auto ipp = decimals(tags::ImagePosition, "ImagePositionPatient", 3);
  s.image_position = {ipp[0], ipp[1], ipp[2]};
  const auto iop = decimals(tags::ImageOrientation, "ImageOrientationPatient", 6);
  std::copy(iop.begin(), iop.end(), s.image_orientation.begin());
  s.slice_thickness = decimals(tags::SliceThickness, "SliceThickness", 1)[0];
  if (!(s.slice_thickness > 0)) fail(Errc::MalformedPreamble, tag_name(tags::SliceThickness) + " must be positive");

  if (auto v = optional(tags::RescaleSlope)) s.rescale_slope = dicom::detail::as_decimals(*v, tags::RescaleSlope).at(0);
  if (auto v = optional(tags::RescaleIntercept))
    s.rescale_intercept = dicom::detail::as_decimals(*v, tags::RescaleIntercept).at(0);

  if (auto v = optional(tags::SamplesPerPixel); v && dicom::detail::as_us(*v, tags::SamplesPerPixel) != 1)
    fail(Errc::UnsupportedDatatype, tag_name(tags::SamplesPerPixel) + " must be 1");
  const auto bits_alloc = optional(tags::BitsAllocated) ? dicom::detail::as_us(*optional(tags::BitsAllocated), tags::BitsAllocated)
                                                         : std::uint16_t{16};
  const auto bits_stored =
      optional(tags::BitsStored) ? dicom::detail::as_us(*optional(tags::BitsStored), tags::BitsStored) : bits_alloc;
  const bool is_signed = optional(tags::PixelRepresentation) &&
                         dicom::detail::as_us(*optional(tags::PixelRepresentation), tags::PixelRepresentation) == 1;
  if (bits_alloc != 8 && bits_alloc != 16)
    fail(Errc::UnsupportedDatatype, tag_name(tags::BitsAllocated) + " = " + std::to_string(bits_alloc));
  if (bits_stored == 0 || bits_stored > bits_alloc)
    fail(Errc::UnsupportedDatatype, tag_name(tags::BitsStored) + " = " + std::to_string(bits_stored));

  const auto pixels = require(tags::PixelData, "PixelData");
  const std::size_t n = std::size_t{s.rows} * s.cols;
  const std::size_t bpp = bits_alloc / 8;
  if (pixels.size() < n * bpp)
    fail(Errc::TruncatedPayload, tag_name(tags::PixelData) + " holds " + std::to_string(pixels.size()) +
                                     " bytes, need " + std::to_string(n * bpp));
  s.pixel_payload.resize(n);
  const std::uint32_t mask = bits_stored >= 32 ? 0xFFFFFFFFu : ((1u << bits_stored) - 1);
  const std::uint32_t sign_bit = 1u << (bits_stored - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t raw = bpp == 2 ? (pixels[2 * i] | (std::uint32_t{pixels[2 * i + 1]} << 8)) : pixels[i];
    raw &= mask;
    std::int32_t v = static_cast<std::int32_t>(raw);
    if (is_signed && (raw & sign_bit)) v = static_cast<std::int32_t>(raw) - static_cast<std::int32_t>(mask) - 1;
    s.pixel_payload[i] = v;
  }
  return s;
}

/// Serializes a SliceRecord as a Part-10 Explicit VR Little Endian file. The
/// pixel encoding (16-bit signed or unsigned) is chosen from the payload range.
inline Bytes write_dicom_slice(const SliceRecord& s) {
  using namespace dicom;
  if (s.pixel_payload.size() != std::size_t{s.rows} * s.cols)
    fail(Errc::InconsistentGeometry, "payload size does not equal rows*cols");
  const auto [mn, mx] = s.pixel_payload.empty() ? std::pair<std::int32_t, std::int32_t>{0, 0}
                                                  : [&] {
                                                      auto [a, b] = std::minmax_element(s.pixel_payload.begin(),
                                                                                        s.pixel_payload.end());
                                                      return std::pair{*a, *b};
                                                    }();
  const bool is_signed = mn < 0;
  if (is_signed ? (mn < -32768 || mx > 32767) : mx > 65535)
    fail(Errc::UnsupportedDatatype, "pixel values do not fit 16 bits");

  const bool is_mr = s.modality == "MR";
  const std::string sop_class = is_mr ? "1.2.840.10008.5.1.4.1.1.4" : "1.2.840.10008.5.1.4.1.1.2";

  ByteWriter meta;
  {
    const std::uint8_t version[2] = {0, 1};
    dicom::detail::put_element(meta, tag(0x0002, 0x0001), "OB", version);
    dicom::detail::put_string(meta, tag(0x0002, 0x0002), "UI", sop_class);
    dicom::detail::put_string(meta, tag(0x0002, 0x0003), "UI", s.sop_uid);
    dicom::detail::put_string(meta, tags::TransferSyntax, "UI", std::string(kExplicitVrLittleEndian));
    dicom::detail::put_string(meta, tag(0x0002, 0x0012), "UI", "1.2.826.0.1.3680043.10.1043.1");
  }

  ByteWriter w;
  w.pad_to(128);
  w.put_bytes(std::string_view("DICM"));
  {
    std::uint8_t len[4];
    const auto n = static_cast<std::uint32_t>(meta.size());
    std::memcpy(len, &n, 4);
    dicom::detail::put_element(w, tag(0x0002, 0x0000), "UL", len);
    w.put_bytes(meta.bytes());
  }

  dicom::detail::put_string(w, tags::SopClassUid, "UI", sop_class);
  dicom::detail::put_string(w, tags::SopInstanceUid, "UI", s.sop_uid);
  if (s.acquisition_time) {
    auto [da, tm] = format_dicom_timestamp(*s.acquisition_time);
    dicom::detail::put_string(w, tags::AcquisitionDate, "DA", da);
    dicom::detail::put_string(w, tags::AcquisitionTime, "TM", tm);
  }
  if (!s.modality.empty()) dicom::detail::put_string(w, tags::Modality, "CS", s.modality);
  if (!s.series_description.empty()) dicom::detail::put_string(w, tags::SeriesDescription, "LO", s.series_description);
  dicom::detail::put_string(w, tags::SliceThickness, "DS", dicom::detail::format_decimal(s.slice_thickness));
  if (!s.study_uid.empty()) dicom::detail::put_string(w, tags::StudyInstanceUid, "UI", s.study_uid);
  dicom::detail::put_string(w, tags::SeriesInstanceUid, "UI", s.series_uid);
  dicom::detail::put_string(w, tags::ImagePosition, "DS", dicom::detail::join_decimals(s.image_position));
  dicom::detail::put_string(w, tags::ImageOrientation, "DS", dicom::detail::join_decimals(s.image_orientation));
  dicom::detail::put_us(w, tags::SamplesPerPixel, 1);
  dicom::detail::put_string(w, tag(0x0028, 0x0004), "CS", "MONOCHROME2");
  dicom::detail::put_us(w, tags::Rows, static_cast<std::uint16_t>(s.rows));
  dicom::detail::put_us(w, tags::Columns, static_cast<std::uint16_t>(s.cols));
  dicom::detail::put_string(w, tags::PixelSpacing, "DS", dicom::detail::join_decimals(s.pixel_spacing));
  dicom::detail::put_us(w, tags::BitsAllocated, 16);
  dicom::detail::put_us(w, tags::BitsStored, 16);
  dicom::detail::put_us(w, tag(0x0028, 0x0102), 15);
  dicom::detail::put_us(w, tags::PixelRepresentation, is_signed ? 1 : 0);
  dicom::detail::put_string(w, tags::RescaleIntercept, "DS", dicom::detail::format_decimal(s.rescale_intercept));
  dicom::detail::put_string(w, tags::RescaleSlope, "DS", dicom::detail::format_decimal(s.rescale_slope));

  Bytes pixels(s.pixel_payload.size() * 2);
  for (std::size_t i = 0; i < s.pixel_payload.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(s.pixel_payload[i]);
    pixels[2 * i] = static_cast<std::uint8_t>(u & 0xFF);
    pixels[2 * i + 1] = static_cast<std::uint8_t>(u >> 8);
  }
  dicom::detail::put_element(w, tags::PixelData, "OW", pixels);
  return std::move(w).take();
}

struct AssembleOptions {
  Modality modality = Modality::Other;
  double orientation_tolerance = 1e-3;
  double spacing_tolerance = 0.10;  // max gap deviation, fraction of the median gap
  HuBand band;
};

/// Stacks the slices of one series into a calibrated volume, ordered along the
/// slice normal (cross product of the row and column cosines).
inline VoxelVolume assemble_volume(std::vector<SliceRecord> slices, const AssembleOptions& opt = {}) {
  if (slices.empty()) fail(Errc::InconsistentGeometry, "no slices");
  const auto& ref = slices.front();
  for (const auto& s : slices) {
    if (s.series_uid != ref.series_uid)
      fail(Errc::InconsistentGeometry, "mixed series " + ref.series_uid + " and " + s.series_uid);
    if (s.rows != ref.rows || s.cols != ref.cols)
      fail(Errc::InconsistentGeometry, "slice " + s.sop_uid + " has different rows/cols");
    if (s.pixel_payload.size() != std::size_t{s.rows} * s.cols)
      fail(Errc::InconsistentGeometry, "slice " + s.sop_uid + " payload size mismatch");
    for (int k = 0; k < 6; ++k)
      if (std::abs(s.image_orientation[k] - ref.image_orientation[k]) > opt.orientation_tolerance)
        fail(Errc::InconsistentGeometry, "slice " + s.sop_uid + " orientation differs");
    for (int k = 0; k < 2; ++k)
      if (std::abs(s.pixel_spacing[k] - ref.pixel_spacing[k]) > opt.orientation_tolerance)
        fail(Errc::InconsistentGeometry, "slice " + s.sop_uid + " pixel spacing differs");
    if (s.rescale_slope != ref.rescale_slope || s.rescale_intercept != ref.rescale_intercept)
      fail(Errc::ConflictingRescale, "series " + ref.series_uid + " mixes rescale parameters");
  }

  const Vec3 normal = ref.normal();
  std::sort(slices.begin(), slices.end(), [&](const SliceRecord& a, const SliceRecord& b) {
    const double pa = dot(a.image_position, normal), pb = dot(b.image_position, normal);
    if (pa != pb) return pa < pb;
    return a.sop_uid < b.sop_uid;
  });

  double z_spacing = ref.slice_thickness;
  if (slices.size() > 1) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < slices.size(); ++i)
      gaps.push_back(dot(slices[i].image_position, normal) - dot(slices[i - 1].image_position, normal));
    auto sorted = gaps;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(sorted.size() - 1) / 2];
    if (!(median > 0)) fail(Errc::NonUniformSpacing, "duplicate slice positions");
    for (std::size_t i = 0; i < gaps.size(); ++i)
      if (std::abs(gaps[i] - median) > opt.spacing_tolerance * median)
        fail(Errc::NonUniformSpacing, "gap " + std::to_string(gaps[i]) + " mm between slices " +
                                          std::to_string(i) + " and " + std::to_string(i + 1) +
                                          " deviates from median " + std::to_string(median) + " mm");
    z_spacing = median;
  }

  VoxelVolume v(Dims{ref.cols, ref.rows, slices.size()});
  v.spacing = {ref.pixel_spacing[1], ref.pixel_spacing[0], z_spacing};
  v.origin = slices.front().image_position;
  const double nn = norm(normal);
  v.orientation.cols = {ref.row_direction(), ref.column_direction(),
                        nn > 0 ? Vec3{normal[0] / nn, normal[1] / nn, normal[2] / nn} : normal};
  v.modality = opt.modality;
  v.provenance.series_uid = ref.series_uid;
  v.provenance.exam_id = ref.study_uid;

  const std::size_t per = v.dims.slice_count();
  for (std::size_t z = 0; z < slices.size(); ++z) {
    const auto& s = slices[z];
    for (std::size_t i = 0; i < per; ++i)
      v.data[z * per + i] = static_cast<float>(static_cast<double>(s.pixel_payload[i]) * s.rescale_slope +
                                               s.rescale_intercept);
  }
  enforce_plausibility(v, opt.band);
  v.dtype = narrowest_scalar_type(v.data);
  return v;
}

/// Manifest line for a slice: every field except the pixel payload.
inline nlohmann::json slice_summary_json(const SliceRecord& s) {
  nlohmann::json j;
  j["sop_uid"] = s.sop_uid;
  j["series_uid"] = s.series_uid;
  j["study_uid"] = s.study_uid;
  j["modality"] = s.modality;
  j["series_description"] = s.series_description;
  if (s.acquisition_time) {
    auto [da, tm] = format_dicom_timestamp(*s.acquisition_time);
    j["acquisition_time"] = da + "T" + tm;
  } else {
    j["acquisition_time"] = nullptr;
  }
  j["image_position"] = s.image_position;
  j["image_orientation"] = s.image_orientation;
  j["pixel_spacing"] = s.pixel_spacing;
  j["slice_thickness"] = s.slice_thickness;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["rescale_slope"] = s.rescale_slope;
  j["rescale_intercept"] = s.rescale_intercept;
  return j;
}

}  // namespace rave
