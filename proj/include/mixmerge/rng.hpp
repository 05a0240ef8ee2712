#pragma once

#include <cstdint>

namespace mixmerge {

// Counter-based pseudo-random generator (SplitMix64 stepping). The n-th output
// of a stream is a pure function of (key, n):
//
//   out(key, n) = mix64(key + n * 0x9E3779B97F4A7C15)          n = 1, 2, ...
//
// where mix64 is the SplitMix64 finalizer. Uses only 64-bit integer arithmetic,
// so every stream is bit-identical across platforms and compilers. The full
// scheme, including substream derivation and the float mapping, is documented
// in docs/formats.md.

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

/// Derives the key of the index-th substream of a base seed. Distinct from the
/// output sequence of CounterRng(seed) by construction (different mixing path).
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t index) {
    return mix64(seed ^ mix64(0xD1B54A32D192ED03ULL + index));
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return mix64(key_ + kGoldenGamma * ++counter_); }

    /// Uniform double strictly inside (0,1): ((u >> 11) + 0.5) * 2^-53.
    /// All operations are exact in IEEE-754 binary64, so the mapping is
    /// bit-reproducible.
    double next_open01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace mixmerge
