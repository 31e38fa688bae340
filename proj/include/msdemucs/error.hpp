// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace msd {

enum class ErrorCode {
  kInvalidArgument,
  kShape,
  kState,
  kIo,
  kUnsupportedFormat,
  kVersion,
  kNumeric,
  kUndefinedMetric,
  kUnpaired,
};

const char* error_code_name(ErrorCode code);

/// Base of every error thrown by the library. The code is what crosses the
/// C boundary; the message is free text for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define MSD_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Code, message) {} \
  };

MSD_DEFINE_ERROR(InvalidArgument, ErrorCode::kInvalidArgument)
MSD_DEFINE_ERROR(ShapeError, ErrorCode::kShape)
MSD_DEFINE_ERROR(StateError, ErrorCode::kState)
MSD_DEFINE_ERROR(IoError, ErrorCode::kIo)
MSD_DEFINE_ERROR(UnsupportedFormat, ErrorCode::kUnsupportedFormat)
MSD_DEFINE_ERROR(VersionError, ErrorCode::kVersion)
MSD_DEFINE_ERROR(NumericError, ErrorCode::kNumeric)
MSD_DEFINE_ERROR(UndefinedMetric, ErrorCode::kUndefinedMetric)

#undef MSD_DEFINE_ERROR

}  // namespace msd
