#ifndef LENSEM_QUANTIZER_HPP
#define LENSEM_QUANTIZER_HPP

// Uniform symmetric mid-riser quantizer
//   Q(x) = sign(x) [min(ceil(|x|/delta), 2^(b-1)) - 1/2] delta,  sign(0) = +1,
// with delta = sqrt(E x^2) * gamma and gamma the Gaussian-MSE-optimal step.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "lensem/truncated_normal.hpp"
#include "lensem/types.hpp"

namespace lensem
{

struct QuantizerSpec
{
    int bits = 3;
    double gamma = 0.0; // normalized step
    double delta = 0.0; // absolute step
    double power = 0.0; // per-real-component second moment used for calibration

    int levels_per_sign() const noexcept { return 1 << (bits - 1); }
};

struct BinBounds
{
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
};

inline constexpr int max_quantizer_bits = 16;

/// Step minimizing E[(x - Q(x))^2] for x ~ N(0, 1) with delta = gamma.
/// Table generated by bounded 1-D minimization of the closed-form distortion
/// (see gaussian_distortion); tests re-derive it independently.
inline double optimal_stepsize(int bits)
{
    static constexpr std::array<double, max_quantizer_bits> table = {
        1.5957691216, 0.9956866892, 0.5860194418, 0.3352006161, 0.1881387896, 0.1040630185,
        0.0568676746, 0.0307623902, 0.0164989614, 0.0087854640, 0.0046498413, 0.0024484111,
        0.0012836228, 0.0006704524, 0.0003490605, 0.0001812217,
    };
    detail::require(bits >= 1 && bits <= max_quantizer_bits,
                    "optimal_stepsize: unsupported bit depth " + std::to_string(bits));
    return table[bits - 1];
}

/// Mean squared quantization error for a unit-variance Gaussian input and
/// step gamma, evaluated in closed form bin by bin.
inline double gaussian_distortion(double gamma, int bits)
{
    detail::require(gamma > 0.0, "gaussian_distortion: gamma must be > 0");
    detail::require(bits >= 1 && bits <= max_quantizer_bits, "gaussian_distortion: unsupported bit depth");
    const int n = 1 << (bits - 1);
    double total = 0.0;
    for (int k = 1; k <= n; ++k)
    {
        const double a = (k - 1) * gamma;
        const double c = (k - 0.5) * gamma;
        const bool last = (k == n);
        const double b = k * gamma;
        // mass, first and second moments of N(0,1) over [a, b)
        const double m0 = 0.5 * (std::erfc(a * inv_sqrt2) - (last ? 0.0 : std::erfc(b * inv_sqrt2)));
        const double m1 = normal_pdf(a) - (last ? 0.0 : normal_pdf(b));
        const double m2 = m0 + a * normal_pdf(a) - (last ? 0.0 : b * normal_pdf(b));
        total += m2 - 2.0 * c * m1 + c * c * m0;
    }
    return 2.0 * total;
}

inline QuantizerSpec calibrate(double power, int bits)
{
    detail::require(power > 0.0 && std::isfinite(power), "calibrate: power must be > 0");
    QuantizerSpec spec;
    spec.bits = bits;
    spec.gamma = optimal_stepsize(bits);
    spec.power = power;
    spec.delta = std::sqrt(power) * spec.gamma;
    return spec;
}

inline double quantize_scalar(double x, const QuantizerSpec& spec)
{
    detail::require(std::isfinite(x), "quantize_scalar: non-finite input");
    const double n = spec.levels_per_sign();
    const double k = std::max(1.0, std::min(std::ceil(std::abs(x) / spec.delta), n));
    const double level = (k - 0.5) * spec.delta;
    return std::signbit(x) && x != 0.0 ? -level : level;
}

inline CVector quantize_complex(const CVector& y, const QuantizerSpec& spec)
{
    CVector r(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i)
    {
        r(i) = {quantize_scalar(y(i).real(), spec), quantize_scalar(y(i).imag(), spec)};
    }
    return r;
}

/// Inverse image of an output level: Q(x) = level for x in (lower, upper]
/// (positive levels) or [lower, upper) (negative levels). Saturated levels
/// have an infinite outer bound.
inline BinBounds bin_bounds(double level, const QuantizerSpec& spec)
{
    detail::require(std::isfinite(level), "bin_bounds: non-finite level");
    const double ratio = std::abs(level) / spec.delta;
    const double k = std::round(ratio + 0.5);
    const int n = spec.levels_per_sign();
    if (k < 1.0 || k > n || std::abs(ratio - (k - 0.5)) > 1e-9 * std::max(1.0, k))
    {
        throw std::invalid_argument("bin_bounds: value is not a quantizer output level");
    }
    const double inner = (k - 1.0) * spec.delta;
    const double outer = (k < n) ? k * spec.delta : std::numeric_limits<double>::infinity();
    if (level > 0.0)
    {
        return {inner, outer};
    }
    return {-outer, -inner};
}

} // namespace lensem

#endif // LENSEM_QUANTIZER_HPP
