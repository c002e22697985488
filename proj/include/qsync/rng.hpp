#ifndef QSYNC_RNG_HPP
#define QSYNC_RNG_HPP

#include <cstdint>
#include <random>

namespace qsync {

/// Uniform double in [0, 1) from the top 53 bits of one mt19937_64 draw.
/// std::uniform_real_distribution is implementation-defined, which would
/// break byte-identical output across toolchains; this is not.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace qsync

#endif
