#ifndef HETMOGP_RANDOM_HPP
#define HETMOGP_RANDOM_HPP

#include <cstdint>
#include <random>

namespace hetmogp {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream id); the mixing constant keeps
/// neighbouring seeds from producing correlated engines.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return n01(rng);
}

}  // namespace hetmogp

#endif
