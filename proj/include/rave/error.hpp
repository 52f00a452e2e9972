#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rave {

/// Named failure conditions. Every error raised by the library carries one.
enum class Errc {
  // volume-io
  MalformedPreamble,
  UnsupportedTransferSyntax,
  MissingRequiredAttribute,
  InconsistentGeometry,
  NonUniformSpacing,
  ConflictingRescale,
  UnsupportedDatatype,
  // shared by nifti / rvc header validation
  BadMagic,
  // series-select
  NoAxialSeries,
  RoleUnmatched,
  // windowing-tokenizer
  DegenerateVolume,
  EmptyForeground,
  IndivisibleDims,
  InvalidPlan,
  // rvc-container
  UnsupportedDtypeForCodec,
  CodecUnavailable,
  CrcMismatch,
  TruncatedPayload,
  IndexOutOfRange,
  // report-engine
  NoFindingsSection,
  InvalidQuestionSet,
  AnswererUnreachable,
  InsufficientExams,
  // probe-eval
  NonFiniteLoss,
  UndefinedMetric,
  InvalidDataset,
  // plumbing
  InvalidConfig,
  IoError,
};

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::MalformedPreamble: return "MalformedPreamble";
    case Errc::UnsupportedTransferSyntax: return "UnsupportedTransferSyntax";
    case Errc::MissingRequiredAttribute: return "MissingRequiredAttribute";
    case Errc::InconsistentGeometry: return "InconsistentGeometry";
    case Errc::NonUniformSpacing: return "NonUniformSpacing";
    case Errc::ConflictingRescale: return "ConflictingRescale";
    case Errc::UnsupportedDatatype: return "UnsupportedDatatype";
    case Errc::BadMagic: return "BadMagic";
    case Errc::NoAxialSeries: return "NoAxialSeries";
    case Errc::RoleUnmatched: return "RoleUnmatched";
    case Errc::DegenerateVolume: return "DegenerateVolume";
    case Errc::EmptyForeground: return "EmptyForeground";
    case Errc::IndivisibleDims: return "IndivisibleDims";
    case Errc::InvalidPlan: return "InvalidPlan";
    case Errc::UnsupportedDtypeForCodec: return "UnsupportedDtypeForCodec";
    case Errc::CodecUnavailable: return "CodecUnavailable";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::NoFindingsSection: return "NoFindingsSection";
    case Errc::InvalidQuestionSet: return "InvalidQuestionSet";
    case Errc::AnswererUnreachable: return "AnswererUnreachable";
    case Errc::InsufficientExams: return "InsufficientExams";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::InvalidDataset: return "InvalidDataset";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

}  // namespace rave
