#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskcl {

// Operand dimensions do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters, dims, class indices, method grids.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN or infinity where a finite value is required.
struct NumericError : std::domain_error {
  using std::domain_error::domain_error;
};

// A label fed to a masked loss lies outside the mask. Always a harness bug.
struct LabelMaskError : std::logic_error {
  using std::logic_error::logic_error;
};

// Tasks trained out of order, JSON schema mismatch, etc.
struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

struct EmptyBufferError : std::runtime_error {
  EmptyBufferError() : std::runtime_error("replay buffer is empty") {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed binary input. Carries the byte offset where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace maskcl
