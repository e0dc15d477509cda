#pragma once

#include <functional>
#include <optional>

#include "thinlayer/error.hpp"

namespace thinlayer::testing {

/// Code of the library error raised by `fn`, or nothing when it returns.
inline std::optional<ErrorCode> error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace thinlayer::testing
