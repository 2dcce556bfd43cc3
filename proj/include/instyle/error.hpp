#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace instyle {

enum class ErrorCode {
  MagicMismatch,
  VersionUnsupported,
  TruncatedFile,
  NonFiniteValue,
  DuplicateId,
  UnsortedIds,
  NotNormalized,
  ZeroVectorRow,
  ZeroVector,
  DimMismatch,
  CountMismatch,
  IdMismatch,
  EmptyClip,
  RangeOutOfBounds,
  InvalidClipTable,
  PoolExhausted,
  KTooLarge,
  SingularSystem,
  UnsortedThresholds,
  NonFiniteLoss,
  EmptyStyleSet,
  BatchTooLarge,
  MissingTruth,
  UnknownCandidate,
  EmptyRanks,
  ConfigInvalid,
  MissingChunk,
  IoError,
  ParseError,
};

std::string_view error_name(ErrorCode code) noexcept;

// Every failure in the library surfaces as this exception; `code()` is the
// stable, machine-checkable part and the message carries context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace instyle
