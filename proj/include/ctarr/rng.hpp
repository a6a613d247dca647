#pragma once

#include <cstdint>

namespace ctarr {

// splitmix64: tiny, seedable, and easy to reproduce outside C++ when test
// fixtures need regenerating. Not for cryptography.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) from the top 53 bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) { return int(uniform() * double(n)); }

    bool coin() { return (next_u64() & 1ull) != 0; }

private:
    std::uint64_t state_;
};

}  // namespace ctarr
