#pragma once

#include <stdexcept>
#include <string>

namespace mcbp {

enum class ErrorKind {
  kInvalidArgument,
  kOutOfRange,
  kInvalidState,
  kCorruptStream,
  kCorruptContainer,
  kUnsupportedFormat,
  kIo,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every recoverable failure in the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kOutOfRange: return "out-of-range";
    case ErrorKind::kInvalidState: return "invalid-state";
    case ErrorKind::kCorruptStream: return "corrupt-stream";
    case ErrorKind::kCorruptContainer: return "corrupt-container";
    case ErrorKind::kUnsupportedFormat: return "unsupported-format";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

}  // namespace mcbp
