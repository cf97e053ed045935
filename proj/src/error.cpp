#include "htrlab/error.hpp"

namespace htrlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NumericDomain: return "NumericDomain";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::IndexOutOfVocab: return "IndexOutOfVocab";
    case ErrorCode::OddDimension: return "OddDimension";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MixedWriterBatch: return "MixedWriterBatch";
    case ErrorCode::InsufficientInk: return "InsufficientInk";
    case ErrorCode::DegenerateClustering: return "DegenerateClustering";
    case ErrorCode::UnknownWriter: return "UnknownWriter";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::ManifestParseError: return "ManifestParseError";
    case ErrorCode::SplitLeakage: return "SplitLeakage";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IOError: return "IOError";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::IncompatibleRuns: return "IncompatibleRuns";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace htrlab
