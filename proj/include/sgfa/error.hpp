#pragma once

#include <stdexcept>
#include <string>

namespace sgfa {

/// Broad failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
  InvalidArgument,
  Shape,
  Numerical,
  Adaptation,
  Parse,
  Alignment,
  Degenerate,
  Config,
  Io,
  Dependency,
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

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

}  // namespace sgfa
