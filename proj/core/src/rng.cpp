#include "ccn/rng.hpp"

#include <cmath>

namespace ccn {

double Rng::normal(double mean, double stddev) {
    // 1 - u keeps the argument of log strictly positive.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    return mean + stddev * r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling over the smallest covering power of two.
    std::uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    std::uint64_t r;
    do {
        r = engine_() & mask;
    } while (r >= n);
    return r;
}

Rng Rng::fork(std::uint64_t stream_id) {
    // SplitMix-style scramble keeps forked streams decorrelated from the
    // parent and from each other.
    std::uint64_t z = next_u64() + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
}

}  // namespace ccn
