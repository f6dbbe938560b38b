#pragma once

#include <cstdint>
#include <random>

#include <uqp/linalg.hpp>

namespace uqp {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; decorrelates neighbouring seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/*
 * Stream-splitting rule: the generator for sub-stream `stream` of a run
 * seeded with `seed` is seeded with splitmix64(splitmix64(seed) ^ stream).
 * Tiles, runs and auxiliary draws each get their own stream id, so results
 * do not depend on evaluation order.
 */
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    return splitmix64(splitmix64(seed) ^ stream);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream)
{
    return Rng(derive_seed(seed, stream));
}

// Reserved stream ids; tile streams use their linear tile index.
inline constexpr std::uint64_t stream_solution = 0xA11CE000ULL;
inline constexpr std::uint64_t stream_subset = 0xA11CE001ULL;
inline constexpr std::uint64_t stream_partition = 0xA11CE002ULL;

inline Matrix standard_normal(Index rows, Index cols, Rng& rng)
{
    std::normal_distribution<double> normal;
    Matrix z(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) z(i, j) = normal(rng);
    return z;
}

} // namespace uqp
