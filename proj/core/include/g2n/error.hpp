#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace g2n {

// All recoverable failures in the library throw g2n::Error with a
// single-line, human-readable message.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void stream_all(std::ostringstream&) {}

template <typename T, typename... Rest>
void stream_all(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  stream_all(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string strcat_msg(const Args&... args) {
  std::ostringstream os;
  detail::stream_all(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw Error(strcat_msg(args...));
}

#define G2N_CHECK(cond, ...)        \
  do {                              \
    if (!(cond)) ::g2n::fail(__VA_ARGS__); \
  } while (0)

}  // namespace g2n
