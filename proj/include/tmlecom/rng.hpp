#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace tmlecom {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// xoshiro256** keyed by a (seed, stream...) tuple. Two different key tuples
/// give statistically independent streams, so results never depend on the
/// order in which parallel workers request them.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t s1 = 0, std::uint64_t s2 = 0,
                 std::uint64_t s3 = 0) {
        std::uint64_t k = seed;
        for (std::uint64_t part : {s1, s2, s3}) {
            std::uint64_t t = k ^ (part + 0x632BE59BD9B4E019ULL);
            k = splitmix64(t);
        }
        for (auto& s : state_) s = splitmix64(k);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0,1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double normal(double mean = 0.0, double sd = 1.0);
    bool bernoulli(double p) { return uniform() < p; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace tmlecom
