#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace segmate {

// Every failure surfaced by the library is one of these kinds, wrapped in a
// segmate::Error. Callers that need to distinguish (the CLI, the fuzz tests)
// switch on kind(); everyone else just sees a std::runtime_error.
enum class ErrorKind {
  Shape,
  Config,
  Range,
  Data,
  Format,
  Usage,
  Generation,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Config: return "config";
    case ErrorKind::Range: return "range";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Generation: return "generation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + msg),
        kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) fail(ErrorKind::Shape, msg);
}

}  // namespace segmate
