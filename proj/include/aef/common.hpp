#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aef {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream o;
    o << "[";
    for (size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
    o << "]";
    return o.str();
}

// Thrown on tensor shape / axis mismatches.
struct DimError : std::runtime_error {
    explicit DimError(const std::string& m) : std::runtime_error(m) {}
};

// Thrown on invalid module configuration (divisibility, ranges).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Thrown when an op contract is violated at runtime (non-scalar loss, NaNs).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// FNV-1a 64-bit, used for config/provenance hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

}  // namespace aef
