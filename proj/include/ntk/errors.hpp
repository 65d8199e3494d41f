#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ntk {

// Invalid arguments (shape mismatches, bad budgets) are reported with
// std::invalid_argument. The types below cover the remaining failure modes.

/// A ratio metric whose denominator estimate is not strictly positive.
class DegenerateKernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense materialization or an exact n-matvec pass was refused because the
/// state dimension exceeds the configured cap.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed IDX container. `offset()` is the byte where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class DatasetNotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ntk
