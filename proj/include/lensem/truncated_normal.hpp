#ifndef LENSEM_TRUNCATED_NORMAL_HPP
#define LENSEM_TRUNCATED_NORMAL_HPP

// Moments and log-masses of a Gaussian restricted to an interval. Tail
// intervals are evaluated through the scaled complementary error function so
// that bins many standard deviations away from the mean keep full precision.

#include <algorithm>
#include <cmath>
#include <limits>

#include "lensem/types.hpp"

namespace lensem
{

inline constexpr double inv_sqrt2 = 0.70710678118654752440;
inline constexpr double inv_sqrt_2pi = 0.39894228040143267794;
inline constexpr double inv_sqrt_pi = 0.56418958354775628695;

inline double normal_pdf(double x) noexcept
{
    return std::isinf(x) ? 0.0 : inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * inv_sqrt2); }

/// Scaled complementary error function erfc(x) * exp(x^2), for x >= 0.
inline double erfcx(double x) noexcept
{
    if (std::isinf(x))
    {
        return x > 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    if (x < 5.0)
    {
        return std::erfc(x) * std::exp(x * x);
    }
    // Continued fraction erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + (2/2)/(x + ...))),
    // evaluated bottom-up; 60 terms are well past double precision for x >= 5.
    double f = x;
    for (int k = 60; k >= 1; --k)
    {
        f = x + 0.5 * k / f;
    }
    return inv_sqrt_pi / f;
}

namespace detail
{

// Intervals with width * max(1, |midpoint|) below this (in standard
// deviations) use a midpoint expansion; above it the closed forms keep about
// 13 significant digits.
inline constexpr double narrow_width = 1e-3;

inline bool is_narrow(double a, double b) noexcept
{
    return (b - a) * std::max(1.0, std::abs(0.5 * (a + b))) < narrow_width;
}

// Standardized truncated mean (phi(a) - phi(b)) / (Phi(b) - Phi(a)) for
// 0 <= a < b <= inf. Returns NaN if the mass cannot be resolved.
inline double right_tail_mean(double a, double b) noexcept
{
    const double ea = erfcx(a * inv_sqrt2);
    if (std::isinf(b))
    {
        return 2.0 * inv_sqrt_2pi / ea;
    }
    const double gap = -0.5 * (b - a) * (b + a);
    const double shrink = std::exp(gap);
    const double num = -inv_sqrt_2pi * std::expm1(gap);
    const double den = 0.5 * (ea - erfcx(b * inv_sqrt2) * shrink);
    return den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
}

inline double right_tail_log_mass(double a, double b) noexcept
{
    const double ea = erfcx(a * inv_sqrt2);
    if (std::isinf(b))
    {
        return std::log(0.5 * ea) - 0.5 * a * a;
    }
    const double shrink = std::exp(-0.5 * (b - a) * (b + a));
    return std::log(0.5 * (ea - erfcx(b * inv_sqrt2) * shrink)) - 0.5 * a * a;
}

} // namespace detail

/// E[X | a < X < b] for X ~ N(0, 1); bounds may be infinite. Sets
/// *degenerate when the interval mass underflows and the nearest bound is
/// returned instead.
inline double standard_truncated_mean(double a, double b, bool* degenerate = nullptr)
{
    detail::require(a < b, "standard_truncated_mean: lower must be < upper");
    if (degenerate)
    {
        *degenerate = false;
    }
    if (std::isinf(a) && std::isinf(b))
    {
        return 0.0;
    }
    if (detail::is_narrow(a, b))
    {
        const double c = 0.5 * (a + b);
        const double w2 = (b - a) * (b - a);
        return c - c * w2 / 12.0 + (c * c + 2.0) * c * w2 * w2 / 720.0;
    }

    double m = 0.0;
    if (a >= 0.0)
    {
        m = detail::right_tail_mean(a, b);
    }
    else if (b <= 0.0)
    {
        m = -detail::right_tail_mean(-b, -a);
    }
    else
    {
        // straddles zero: both erf terms are positive, no cancellation
        const double mass = 0.5 * (std::erf(b * inv_sqrt2) - std::erf(a * inv_sqrt2));
        m = (normal_pdf(a) - normal_pdf(b)) / mass;
    }

    if (!std::isfinite(m))
    {
        if (degenerate)
        {
            *degenerate = true;
        }
        return std::abs(a) < std::abs(b) ? a : b;
    }
    return m;
}

/// E[X | lower < X < upper] for X ~ N(mu, sigma^2).
inline double truncated_gaussian_mean(double mu, double sigma, double lower, double upper,
                                      bool* degenerate = nullptr)
{
    detail::require(sigma > 0.0, "truncated_gaussian_mean: sigma must be > 0");
    detail::require(lower < upper, "truncated_gaussian_mean: lower must be < upper");
    return mu + sigma * standard_truncated_mean((lower - mu) / sigma, (upper - mu) / sigma, degenerate);
}

/// log P(lower < X < upper) for X ~ N(mu, sigma^2).
inline double log_interval_mass(double mu, double sigma, double lower, double upper)
{
    const double a = (lower - mu) / sigma;
    const double b = (upper - mu) / sigma;
    if (std::isinf(a) && std::isinf(b))
    {
        return 0.0;
    }
    if (detail::is_narrow(a, b))
    {
        const double c = 0.5 * (a + b);
        const double w = b - a;
        return std::log(w) + std::log(inv_sqrt_2pi) - 0.5 * c * c + (c * c - 1.0) * w * w / 24.0;
    }
    if (a >= 0.0)
    {
        return detail::right_tail_log_mass(a, b);
    }
    if (b <= 0.0)
    {
        return detail::right_tail_log_mass(-b, -a);
    }
    return std::log(0.5 * (std::erf(b * inv_sqrt2) - std::erf(a * inv_sqrt2)));
}

} // namespace lensem

#endif // LENSEM_TRUNCATED_NORMAL_HPP
