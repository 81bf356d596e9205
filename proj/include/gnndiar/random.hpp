#pragma once

#include <cstdint>
#include <string_view>

namespace gnndiar {

/// Derives an independent seed for a named consumer of a master seed, so one
/// --seed fans out into reproducible sub-streams.
inline std::uint64_t substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ull + (index << 6) + (index >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace gnndiar
