#pragma once

#include <stdexcept>
#include <string>

namespace ebmm {

// Error taxonomy. The C API maps these onto its stable result codes, so new
// failure modes should reuse an existing family rather than add a class.

// Malformed or semantically invalid configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem trouble: missing inputs, unwritable outputs.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Text parse failure; `byte_offset` points at the offending position.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// Non-finite state during sampling or optimization. `index` is the chain
// index for sampler failures and the iteration for training failures.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, long index)
      : std::runtime_error(msg), index(index) {}
  long index;
};

// Checkpoint payload or manifest inconsistent with what the model expects.
struct ArtifactError : std::runtime_error {
  explicit ArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch between tensor operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand values outside an operation's domain.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: broken preconditions that no input data should be able to
// trigger.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace ebmm
