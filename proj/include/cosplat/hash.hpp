#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace cosplat {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline std::uint64_t fnv1a(const void *bytes, std::size_t n, std::uint64_t h = kFnvOffset) {
    const auto *p = static_cast<const unsigned char *>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
    return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// splitmix64 finalizer; used to derive independent per-stage seeds from one global seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t global, std::string_view stage) {
    return splitmix64(global ^ fnv1a(stage));
}

} // namespace cosplat
