#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace sketchy {

/// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace sketchy
