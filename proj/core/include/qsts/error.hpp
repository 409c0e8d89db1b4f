#pragma once

#include <stdexcept>
#include <string>

namespace qsts {

/// Failure categories shared by every module.
enum class ErrorKind {
  kMalformedInput,
  kParameter,
  kFormat,
  kDegenerate,
  kNumerical,
  kProjection,
  kPose,
  kCalibration,
  kGeneration,
  kBaseline,
  kUnavailable,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace qsts
