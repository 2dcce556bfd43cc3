#include "instyle/error.hpp"

namespace instyle {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnsortedIds: return "UnsortedIds";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::ZeroVectorRow: return "ZeroVectorRow";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::EmptyClip: return "EmptyClip";
    case ErrorCode::RangeOutOfBounds: return "RangeOutOfBounds";
    case ErrorCode::InvalidClipTable: return "InvalidClipTable";
    case ErrorCode::PoolExhausted: return "PoolExhausted";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::UnsortedThresholds: return "UnsortedThresholds";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyStyleSet: return "EmptyStyleSet";
    case ErrorCode::BatchTooLarge: return "BatchTooLarge";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::UnknownCandidate: return "UnknownCandidate";
    case ErrorCode::EmptyRanks: return "EmptyRanks";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingChunk: return "MissingChunk";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace instyle
