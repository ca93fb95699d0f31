#ifndef DISPATCH_RNG_HPP
#define DISPATCH_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace dispatch
{

inline std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded 64-bit stream with distribution code written out by hand, so a given
// seed yields the same draws on every standard library implementation.
class Rng
{
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    // Independent child stream; `tag` separates consumers of one master seed.
    static Rng derive(std::uint64_t seed, std::uint64_t tag) noexcept
    {
        return Rng(splitmix64(seed) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
    }

    std::uint64_t next_u64() noexcept { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double low, double high) noexcept { return low + (high - low) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept
    {
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t r;
        do
            r = next_u64();
        while (r >= limit);
        return r % n;
    }

    std::size_t index(std::size_t n) noexcept { return static_cast<std::size_t>(below(n)); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    // Standard normal via Box-Muller (one value per call, no cached spare).
    double normal() noexcept
    {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace dispatch

#endif
