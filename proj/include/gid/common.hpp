#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gid {

/// Input violates a documented precondition or type invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// On-disk data does not match the declared file format.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration cannot produce a valid benchmark or run.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Data is well-formed but insufficient for the requested operation.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Number of worker threads for internally parallel loops, read from
/// GID_THREADS (default 1).
unsigned thread_count();

/// Derive an independent 64-bit stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace gid
