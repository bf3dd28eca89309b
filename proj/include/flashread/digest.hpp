#pragma once

#include <cstdint>
#include <string>

namespace flashread {

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                                 std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_string(const std::string& s,
                                  std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a_bytes(s.data(), s.size(), seed);
}

}  // namespace flashread
