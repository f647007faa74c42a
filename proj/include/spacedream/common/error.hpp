#pragma once

#include <stdexcept>
#include <string>

namespace spacedream {

/// Exception carrying a module-specific error code.
///
/// Every module defines its own `enum class` of failure kinds and throws
/// `Error<ThatEnum>`; callers that care about the kind catch the concrete
/// instantiation and switch on `code()`.
template <typename Code>
class Error : public std::runtime_error {
 public:
  Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

}  // namespace spacedream
