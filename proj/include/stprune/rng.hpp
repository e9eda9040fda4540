#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>

namespace stprune {

// Counter-based pseudo-random generation. Every draw is a pure function of
// (seed, stream, counter), so results are independent of batching order and
// thread schedule.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return splitmix64(splitmix64(seed ^ 0x6a09e667f3bcc909ULL) ^ splitmix64(stream) ^ counter);
}

// Uniform in [0, 1).
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return static_cast<double>(mix(seed, stream, counter) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two sub-draws of the same counter.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t a = mix(seed, stream, 2 * counter);
    const std::uint64_t b = mix(seed, stream, 2 * counter + 1);
    double u1 = static_cast<double>(a >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, n).
inline std::uint64_t below(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                           std::uint64_t n) {
    return mix(seed, stream, counter) % n;
}

inline double sign(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return (mix(seed, stream, counter) & 1) ? 1.0 : -1.0;
}

}  // namespace rng

// Sequential adapter over the counter generator, for code that wants a
// stateful draw-next interface (synthetic data generation).
class SeqRng {
public:
    SeqRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    double uniform() { return rng::uniform(seed_, stream_, counter_++); }
    double normal() { return rng::normal(seed_, stream_, counter_++); }
    std::uint64_t below(std::uint64_t n) { return rng::below(seed_, stream_, counter_++, n); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace stprune
