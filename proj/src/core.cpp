#include "voxdec/core.hpp"

#include <cstdio>

namespace voxdec {

void log_warn(const std::string& msg) { std::fprintf(stderr, "[warn] %s\n", msg.c_str()); }
void log_info(const std::string& msg) { std::fprintf(stderr, "[info] %s\n", msg.c_str()); }

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) { return fnv1a(s.data(), s.size(), seed); }

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace voxdec
