#pragma once

#include <stdexcept>
#include <string>

namespace segkit {

// Contract violation: a caller broke a documented precondition.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid argument value (bad range, bad enum string, ...).
struct ArgError : std::invalid_argument {
    explicit ArgError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Requested tensor would exceed addressable size.
struct AllocError : std::runtime_error {
    explicit AllocError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized data: unknown magic bytes or unsupported version.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Serialized data ends before the declared content does.
struct TruncatedError : std::runtime_error {
    explicit TruncatedError(const std::string& msg) : std::runtime_error(msg) {}
};

// Stored tensor shape does not match what the consumer expects.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem-level failure (missing file, unreadable directory, ...).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during training (non-finite loss or gradient).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace segkit
