#pragma once

#include <stdexcept>
#include <string>

namespace cyclevae {

// Error taxonomy used across the library. The CLI maps each of these to a
// single-line diagnostic on stderr and a nonzero exit code.

// Tensor/operation shape violations. Message carries the offending shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (e.g. backward on a non-scalar).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values or violated dataset bounds.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external file contents (IDX magic, checkpoint header, ...).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failures (missing file, short read, failed write).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value detected where finiteness is a contract.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cyclevae
