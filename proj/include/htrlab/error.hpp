#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace htrlab {

enum class ErrorCode {
  ShapeMismatch,
  NumericDomain,
  NonFinite,
  InvalidConfig,
  InvalidArgument,
  SequenceTooLong,
  IndexOutOfVocab,
  OddDimension,
  InsufficientSamples,
  NonFiniteLoss,
  MixedWriterBatch,
  InsufficientInk,
  DegenerateClustering,
  UnknownWriter,
  InvalidRange,
  ManifestParseError,
  SplitLeakage,
  LengthMismatch,
  IOError,
  CheckpointMismatch,
  IncompatibleRuns,
  FormatError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace htrlab
