#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maneuver {

enum class ErrorKind {
  OverlappingIntervals,
  OutOfRange,
  TooFewSessions,
  InvalidConfig,
  IoFailure,
  MissingManifest,
  ShapeMismatch,
  UnknownDtype,
  EmptyStream,
  CoverageGap,
  BatchTooSmall,
  BadTarget,
  MissingStream,
  StreamMissing,
  CacheMissing,
  NoSessions,
  StreamMismatch,
  ConfigMismatch,
  NoPositives,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::OverlappingIntervals: return "OverlappingIntervals";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::TooFewSessions: return "TooFewSessions";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MissingManifest: return "MissingManifest";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::UnknownDtype: return "UnknownDtype";
    case ErrorKind::EmptyStream: return "EmptyStream";
    case ErrorKind::CoverageGap: return "CoverageGap";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::BadTarget: return "BadTarget";
    case ErrorKind::MissingStream: return "MissingStream";
    case ErrorKind::StreamMissing: return "StreamMissing";
    case ErrorKind::CacheMissing: return "CacheMissing";
    case ErrorKind::NoSessions: return "NoSessions";
    case ErrorKind::StreamMismatch: return "StreamMismatch";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::NoPositives: return "NoPositives";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can dispatch without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace maneuver
