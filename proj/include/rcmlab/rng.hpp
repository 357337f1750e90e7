#pragma once

#include <cmath>
#include <cstdint>

namespace rcmlab {

/// Counter-based RNG: every draw is a pure function of (seed, stream, counter),
/// so parallel generation is order-independent and bitwise reproducible.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(finalize(seed ^ finalize(stream ^ 0x9e3779b97f4a7c15ULL))) {}

    std::uint64_t next_u64() {
        return finalize(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
    }

    /// Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Exponential with the given rate (rate > 0).
    double next_exponential(double rate) {
        double u = next_double();
        return -std::log1p(-u) / rate;
    }

    static std::uint64_t finalize(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace rcmlab
