#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cased {

enum class ErrorKind {
  ZeroVector,
  DimensionMismatch,
  EmptyList,
  InvalidArgument,
  FormatError,
  CountMismatch,
  IoError,
  VersionError,
  EmptyStore,
  InvalidParams,
  LexiconMissing,
  EmptyCandidates,
  NoCandidates,
  ImageTooSmall,
  LengthMismatch,
  EmptyRegions,
  ParseError,
  DecodeError,
  ProviderError,
  InvalidRequest,
  Timeout,
  DimDrift,
  UsageError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::CountMismatch: return "CountMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::VersionError: return "VersionError";
    case ErrorKind::EmptyStore: return "EmptyStore";
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::LexiconMissing: return "LexiconMissing";
    case ErrorKind::EmptyCandidates: return "EmptyCandidates";
    case ErrorKind::NoCandidates: return "NoCandidates";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyRegions: return "EmptyRegions";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::ProviderError: return "ProviderError";
    case ErrorKind::InvalidRequest: return "InvalidRequest";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::DimDrift: return "DimDrift";
    case ErrorKind::UsageError: return "UsageError";
  }
  return "Unknown";
}

// Every failure raised by the library. `code()` carries the provider's error
// code for ProviderError/DecodeError (e.g. "io"), empty otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string code = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

  bool is_provider_side() const noexcept {
    return kind_ == ErrorKind::ProviderError || kind_ == ErrorKind::Timeout ||
           kind_ == ErrorKind::DimDrift || kind_ == ErrorKind::InvalidRequest ||
           kind_ == ErrorKind::DecodeError;
  }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace cased
