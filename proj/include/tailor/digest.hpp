#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "tailor/tensor.hpp"

namespace tailor {

// FNV-1a 64-bit over raw bytes. Used for checkpoint content digests and
// frozen-module invariance checks.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<real_t>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(real_t), h);
}

inline std::uint64_t fnv1a64(const Tensor& t, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t d : t.shape()) {
        h = fnv1a64(&d, sizeof(d), h);
    }
    return fnv1a64(t.data(), h);
}

}  // namespace tailor
