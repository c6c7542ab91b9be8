#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fbo {

/// Caller violated a precondition (bad dimension, bad argument, bad config key).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or other numerical step failed even after conditioning fixes.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data received from another agent.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problem too large for the requested exact path.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningSink = std::function<void(std::string_view)>;

// Default sink writes to stderr. Tests install their own to capture or mute.
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace fbo
