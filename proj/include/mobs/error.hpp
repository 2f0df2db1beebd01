#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace mobs {

/// Bad input: malformed files, invalid arguments, violated preconditions.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation could not produce a meaningful number (degenerate data).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningSink = std::function<void(const std::string&)>;

// Non-fatal diagnostics go through a process-wide sink (stderr by default).
void warn(const std::string& message);
WarningSink set_warning_sink(WarningSink sink);

}  // namespace mobs
