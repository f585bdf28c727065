#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxdec {

// Bad configuration values (CLI/config-file level misuse).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Structurally invalid data handed to an operation (shape mismatch, empty input, ...).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Cache integrity failure: truncated file, checksum or key mismatch.
struct CacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (diverged training, ...).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void log_warn(const std::string& msg);
void log_info(const std::string& msg);

// FNV-1a, used for cache keys and content hashes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hash_hex(std::uint64_t h);

}  // namespace voxdec
