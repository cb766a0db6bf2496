#pragma once

#include <stdexcept>
#include <string>

namespace baskets {

// Input text that cannot be parsed (bad header, bad field, bad number).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input that violates a dataset precondition
// (purchased item without a price, duplicate item in a trip, empty file).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mathematically invalid argument (nonpositive price, checkout passed where
// a purchasable item is required, item outside its trip).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input exceeds a hard size cap (factorial enumeration, split too short).
struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted; carries the iteration at which the objective diverged.
struct OptimizationError : std::runtime_error {
  int iteration;
  OptimizationError(const std::string& msg, int iter)
      : std::runtime_error(msg + " (iteration " + std::to_string(iter) + ")"),
        iteration(iter) {}
};

// Checkpoint or dataset incompatibility (magic, version, catalog mismatch).
struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace baskets
