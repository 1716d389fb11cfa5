#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace margin {

// SplitMix64 mixing step; used standalone and to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Component tags for sub-seed derivation. Every source of randomness in a run
// draws from its own stream: child = derive_seed(master, tag, index). Streams
// for different tags never interact, so e.g. mask draws cannot perturb
// trained parameters.
namespace seed_tag {
inline constexpr std::uint64_t theta0 = 1;
inline constexpr std::uint64_t hyper = 2;
inline constexpr std::uint64_t mask = 3;
inline constexpr std::uint64_t swag = 4;
inline constexpr std::uint64_t alg = 5;
inline constexpr std::uint64_t batch = 6;
inline constexpr std::uint64_t data = 7;
inline constexpr std::uint64_t fold = 8;
inline constexpr std::uint64_t label = 9;
}  // namespace seed_tag

// Fixed 64-bit mixing of (master, tag, index), stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag,
                                 std::uint64_t index) {
    std::uint64_t z = splitmix64(master ^ splitmix64(tag));
    return splitmix64(z ^ splitmix64(index ^ 0x632be59bd9b4e019ull));
}

// FNV-1a; std::hash<std::string> is not stable across implementations.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Deterministic RNG. mt19937_64 raw output is pinned by the standard; the
// double conversions below avoid std::uniform_real_distribution and
// std::normal_distribution, whose exact sequences are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; exactly two uniforms per draw
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // uniform index in [0, n)
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace margin
