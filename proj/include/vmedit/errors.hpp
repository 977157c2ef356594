#pragma once

#include <stdexcept>
#include <string>

namespace vmedit {

// Shape or dimension disagreement between tensors.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (schedule endpoints, group counts, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract violation (non-scalar loss, out-of-range timestep, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (NaN gradient, NaN input where finiteness is required).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-system level failure (missing file, short read/write).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed persisted data (bad magic, truncated payload, schema mismatch).
struct CorruptDataError : std::runtime_error {
    explicit CorruptDataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vmedit
