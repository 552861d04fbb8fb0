#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace iwfqi {

using Rng = std::mt19937_64;

/// splitmix64 finalizer, used as the seed-mixing primitive.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a child seed from a root seed and a path of stream labels.
///
/// Every random draw in the library comes from a generator seeded through
/// this function, so a run is fully determined by its root seed. Typical
/// paths look like (stream::collect, source_id, episode) or
/// (stream::fqi, iteration).
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(root);
    for (std::uint64_t c : path)
        s = splitmix64(s ^ (c + 0x9e3779b97f4a7c15ULL));
    return s;
}

inline Rng make_rng(std::uint64_t root,
                    std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(root, path));
}

/// Stream labels for seed derivation. Fixed values, never reordered.
namespace stream {
constexpr std::uint64_t collect = 1;
constexpr std::uint64_t eval = 2;
constexpr std::uint64_t ert = 3;
constexpr std::uint64_t gp = 4;
constexpr std::uint64_t fqi = 5;
constexpr std::uint64_t pretrain = 6;
constexpr std::uint64_t harness = 7;
constexpr std::uint64_t subsample = 8;
}  // namespace stream

}  // namespace iwfqi
