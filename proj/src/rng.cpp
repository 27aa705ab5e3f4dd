#include "robmer/rng.hpp"

#include <cmath>

namespace robmer::rng {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline counter_t round_once(const counter_t& x, const key_t& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kPhiloxM0, x[0], hi0, lo0);
  mulhilo(kPhiloxM1, x[2], hi1, lo1);
  return {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
}

// (0, 1] uniform from 53 bits of two words.
inline double u53(std::uint32_t hi, std::uint32_t lo) {
  std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

inline counter_t block_at(std::uint64_t stream, std::uint64_t substream, std::uint32_t block) {
  // Streams above 2^32 fold into the block word; the simulator never needs them.
  return {static_cast<std::uint32_t>(substream),
          static_cast<std::uint32_t>(substream >> 32),
          static_cast<std::uint32_t>(stream),
          block ^ static_cast<std::uint32_t>(stream >> 32)};
}

}  // namespace

counter_t philox4x32(counter_t ctr, key_t key) {
  ctr = round_once(ctr, key);
  for (int r = 1; r < 10; ++r) {
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
    ctr = round_once(ctr, key);
  }
  return ctr;
}

std::array<double, 2> uniform2(std::uint64_t seed, std::uint64_t stream,
                               std::uint64_t substream, std::uint32_t block) {
  counter_t out = philox4x32(block_at(stream, substream, block),
                             {static_cast<std::uint32_t>(seed),
                              static_cast<std::uint32_t>(seed >> 32)});
  return {u53(out[0], out[1]), u53(out[2], out[3])};
}

std::array<double, 2> normal2(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t substream, std::uint32_t block) {
  auto u = uniform2(seed, stream, substream, block);
  double r = std::sqrt(-2.0 * std::log(u[0]));
  double phi = 2.0 * M_PI * u[1];
  return {r * std::cos(phi), r * std::sin(phi)};
}

void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                  double* out, int n) {
  for (int i = 0; i < n; i += 2) {
    auto z = normal2(seed, stream, substream, static_cast<std::uint32_t>(i / 2));
    out[i] = z[0];
    if (i + 1 < n) out[i + 1] = z[1];
  }
}

double uniform1(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                std::uint32_t block) {
  return uniform2(seed, stream, substream, block)[0];
}

}  // namespace robmer::rng
