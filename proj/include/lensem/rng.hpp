#ifndef LENSEM_RNG_HPP
#define LENSEM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "lensem/types.hpp"

namespace lensem
{

/// SplitMix64 finalizer. Used to derive independent stream seeds from
/// structured keys (master seed, trial index, ...).
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds a sequence of 64-bit words into one seed. Order-sensitive.
inline constexpr std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) noexcept
{
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (auto w : words)
    {
        h = splitmix64(h ^ splitmix64(w));
    }
    return h;
}

/// Seeded random source. Thin wrapper over mt19937_64 with the draws the
/// simulator needs; owns no global state.
class Rng
{
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return gauss_(engine_); }

    double uniform(double lo, double hi)
    {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    }

    bool bernoulli(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_) < p; }

    /// Circularly-symmetric complex Gaussian with E|x|^2 = variance.
    cplx complex_normal(double variance = 1.0)
    {
        const double s = std::sqrt(variance / 2.0);
        const double re = gauss_(engine_);
        const double im = gauss_(engine_);
        return {s * re, s * im};
    }

    std::mt19937_64& engine() noexcept { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

} // namespace lensem

#endif // LENSEM_RNG_HPP
