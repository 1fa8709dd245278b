#pragma once

#include <stdexcept>
#include <string>

namespace mfid {

enum class ErrorCode {
  InvalidArgument = 1,
  Config = 2,
  Io = 3,
  Numeric = 4,
  Tolerance = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace mfid
