#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace banditcert {

using Rng = std::mt19937_64;

// splitmix64 finalizer; good avalanche for combining seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Child seed for a labelled sub-stream. Results never depend on evaluation
// order, only on (seed, keys).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return Rng(derive_seed(seed, keys));
}

// Stream tags, so that different consumers of one seed never collide.
namespace stream {
inline constexpr std::uint64_t synth_scorer = 1;
inline constexpr std::uint64_t synth_features = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t logging = 4;
inline constexpr std::uint64_t logger_training = 5;
inline constexpr std::uint64_t optimizer = 6;
inline constexpr std::uint64_t selection = 7;
inline constexpr std::uint64_t evaluation = 8;
inline constexpr std::uint64_t coverage = 9;
inline constexpr std::uint64_t sampling = 10;
}  // namespace stream

}  // namespace banditcert
