#pragma once

#include <cstdint>
#include <limits>

namespace odebayes {

/// Counter-based generator: output i is a SplitMix64 finalizer applied to
/// (key, i). Substreams are derived by hashing a child index into the key, so
/// any (seed, replication, draw) triple maps to an independent, reproducible
/// stream regardless of which thread consumes it.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Independent child stream; does not advance this generator.
    CounterRng substream(std::uint64_t index) const {
        CounterRng child;
        child.key_ = mix(key_ ^ mix(index + 0xbb67ae8584caa73bULL));
        return child;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace odebayes
