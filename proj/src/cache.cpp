#include "voxdec/cache.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace voxdec {

namespace {

constexpr std::uint64_t kMagic = 0x564f584445435431ull;  // "VOXDECT1"
constexpr std::uint32_t kDtypeF64 = 1;

void put_u64(std::ofstream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::ifstream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CacheError("corrupt cache: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

// Payload doubles are written little-endian byte by byte so files are
// portable regardless of host endianness.
void put_f64(std::ofstream& os, const double* data, std::size_t n) {
    std::vector<unsigned char> buf(n * 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        for (int k = 0; k < 8; ++k) buf[i * 8 + static_cast<std::size_t>(k)] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void cache_store(const std::filesystem::path& file, const std::string& key, const Tensor& t) {
    std::filesystem::create_directories(file.parent_path());
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CacheError("cannot open cache file for writing: " + file.string());
        put_u64(os, kMagic);
        put_u64(os, kDtypeF64);
        put_u64(os, t.shape.size());
        for (auto s : t.shape) put_u64(os, s);
        put_u64(os, fnv1a(key));
        put_u64(os, fnv1a(t.data.data(), t.data.size() * sizeof(double)));
        put_f64(os, t.data.data(), t.data.size());
        if (!os) throw CacheError("write failure on cache file: " + file.string());
    }
    std::filesystem::rename(tmp, file);
}

Tensor cache_load(const std::filesystem::path& file, const std::string& expected_key) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw CacheError("missing cache file: " + file.string());
    if (get_u64(is) != kMagic) throw CacheError("corrupt cache: bad magic in " + file.string());
    if (get_u64(is) != kDtypeF64) throw CacheError("corrupt cache: unsupported dtype in " + file.string());
    const std::uint64_t rank = get_u64(is);
    if (rank > 8) throw CacheError("corrupt cache: implausible rank in " + file.string());
    Tensor t;
    t.shape.resize(rank);
    for (auto& s : t.shape) s = get_u64(is);
    const std::uint64_t key_hash = get_u64(is);
    if (!expected_key.empty() && key_hash != fnv1a(expected_key))
        throw CacheError("cache key mismatch for " + file.string());
    const std::uint64_t checksum = get_u64(is);
    t.data.resize(t.size());
    std::vector<unsigned char> buf(t.size() * 8);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        throw CacheError("corrupt cache: truncated payload in " + file.string());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[i * 8 + static_cast<std::size_t>(k)]) << (8 * k);
        std::memcpy(&t.data[i], &bits, 8);
    }
    if (fnv1a(t.data.data(), t.data.size() * sizeof(double)) != checksum)
        throw CacheError("corrupt cache: checksum mismatch in " + file.string());
    return t;
}

bool cache_exists(const std::filesystem::path& file) { return std::filesystem::exists(file); }

std::filesystem::path cache_path(const std::filesystem::path& root, const std::string& dataset,
                                 const std::string& subject, const std::string& session,
                                 const std::string& param_hash_, const std::string& stem) {
    return root / dataset / subject / session / (stem + "-" + param_hash_ + ".tns");
}

std::string param_hash(const std::string& canonical_params) { return hash_hex(fnv1a(canonical_params)); }

}  // namespace voxdec
