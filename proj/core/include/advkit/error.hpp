#pragma once

#include <stdexcept>
#include <string>

namespace advkit {

// Library-wide exception. Messages name the failing operation and the
// offending values/shapes so callers can report them verbatim.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace advkit
