#pragma once
#include <stdexcept>
#include <string>

namespace lmr {

// Exit-code-relevant error categories (usage -> 1, data -> 2, numeric -> 3).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace lmr
