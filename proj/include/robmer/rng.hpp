#pragma once

#include <array>
#include <cstdint>

// Counter-based random numbers (Philox4x32-10). Each draw is a pure function
// of (seed, stream, substream, block), so parallel generation is
// order-independent and replay never depends on thread scheduling. The
// simulator keys streams by path and substreams by time step; samplers key
// streams by sample index.

namespace robmer::rng {

using counter_t = std::array<std::uint32_t, 4>;
using key_t = std::array<std::uint32_t, 2>;

/// One Philox4x32-10 block: 128 random bits from a 128-bit counter and a
/// 64-bit key.
counter_t philox4x32(counter_t ctr, key_t key);

/// Two uniforms in (0, 1], each built from 53 bits of one half of a block.
std::array<double, 2> uniform2(std::uint64_t seed, std::uint64_t stream,
                               std::uint64_t substream, std::uint32_t block);

/// Two independent standard normals (Box-Muller over one block).
std::array<double, 2> normal2(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t substream, std::uint32_t block);

/// Fills out[0..n) with standard normals for (seed, stream, substream),
/// consuming blocks 0, 1, ... pairwise.
void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                  double* out, int n);

/// Single uniform in (0, 1] (first element of the block's pair).
double uniform1(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                std::uint32_t block);

}  // namespace robmer::rng
