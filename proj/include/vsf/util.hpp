#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vsf {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string hex8(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(8, '0');
    for (int i = 7; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

/// Shortest round-trip-exact decimal form (%.17g).
std::string format_exact(double v);
/// Fixed 6-decimal form used by the sweep CSV.
std::string format_fixed6(double v);

} // namespace vsf
