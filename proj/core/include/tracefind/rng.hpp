#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace tracefind {

/// splitmix64 step. Used for seeding and for deriving independent streams.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Mixes a seed with a stream label so each consumer gets its own sequence.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept;

/// xoshiro256** seeded through splitmix64. The whole sampling stack (splits,
/// MLM masking, synthetic generation, random baseline) draws from this so
/// results are reproducible across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next() noexcept;

    /// Uniform integer in [0, bound). bound must be > 0. Rejection sampling,
    /// no modulo bias.
    std::uint64_t below(std::uint64_t bound) noexcept;

    /// Uniform integer in [lo, hi].
    std::int64_t between(std::int64_t lo, std::int64_t hi) noexcept;

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept;

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal() noexcept;

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t s_[4];
};

}  // namespace tracefind
