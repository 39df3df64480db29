#ifndef LENSEM_TESTS_ORACLES_HPP
#define LENSEM_TESTS_ORACLES_HPP

// Reference computations that share no code with the library routines they
// check.

#include <cmath>
#include <limits>
#include <random>

#include <boost/multiprecision/mpfr.hpp>
#include <unsupported/Eigen/KroneckerProduct>

#include "lensem/types.hpp"

namespace oracle
{

using lensem::CMatrix;
using lensem::CVector;

/// Exact sampler for N(0,1) restricted to (a, b). Plain rejection when the
/// interval holds enough mass, otherwise uniform or translated-exponential
/// proposals (Robert, 1995).
class TruncatedNormalSampler
{
  public:
    TruncatedNormalSampler(double a, double b) : a_(a), b_(b)
    {
        const double mass = 0.5 * (std::erfc(-b / std::sqrt(2.0)) - std::erfc(-a / std::sqrt(2.0)));
        if (mass > 0.25)
        {
            mode_ = Mode::plain;
        }
        else if (a_ <= 0.0 && b_ >= 0.0)
        {
            mode_ = Mode::uniform_center;
        }
        else
        {
            flip_ = b_ <= 0.0;
            lo_ = flip_ ? -b_ : a_;
            hi_ = flip_ ? -a_ : b_;
            if (std::isfinite(hi_) && (hi_ - lo_) * lo_ < 1.0)
            {
                mode_ = Mode::uniform_tail;
            }
            else
            {
                mode_ = Mode::exponential;
                rate_ = 0.5 * (lo_ + std::sqrt(lo_ * lo_ + 4.0));
            }
        }
    }

    template <typename Engine>
    double operator()(Engine& g)
    {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        switch (mode_)
        {
        case Mode::plain:
            for (;;)
            {
                const double x = gauss_(g);
                if (x > a_ && x < b_)
                {
                    return x;
                }
            }
        case Mode::uniform_center:
            for (;;)
            {
                const double x = a_ + (b_ - a_) * unif(g);
                if (unif(g) <= std::exp(-0.5 * x * x))
                {
                    return x;
                }
            }
        case Mode::uniform_tail:
            for (;;)
            {
                const double x = lo_ + (hi_ - lo_) * unif(g);
                if (unif(g) <= std::exp(0.5 * (lo_ * lo_ - x * x)))
                {
                    return flip_ ? -x : x;
                }
            }
        case Mode::exponential:
            for (;;)
            {
                const double x = lo_ - std::log(1.0 - unif(g)) / rate_;
                if (x >= hi_)
                {
                    continue;
                }
                const double t = x - rate_;
                if (unif(g) <= std::exp(-0.5 * t * t))
                {
                    return flip_ ? -x : x;
                }
            }
        }
        return std::numeric_limits<double>::quiet_NaN();
    }

  private:
    enum class Mode
    {
        plain,
        uniform_center,
        uniform_tail,
        exponential,
    };
    double a_;
    double b_;
    double lo_ = 0.0;
    double hi_ = 0.0;
    double rate_ = 1.0;
    bool flip_ = false;
    Mode mode_ = Mode::plain;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

/// Monte Carlo estimate of E[X | lower < X < upper], X ~ N(mu, sigma^2).
template <typename Engine>
double sampled_truncated_mean(double mu, double sigma, double lower, double upper, int n, Engine& g)
{
    TruncatedNormalSampler s((lower - mu) / sigma, (upper - mu) / sigma);
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
    {
        sum += s(g);
    }
    return mu + sigma * sum / n;
}

// 400 digits keep the erf difference meaningful out to about 40 standard deviations.
using mp_float = boost::multiprecision::number<boost::multiprecision::mpfr_float_backend<400>>;

/// Posterior-mean offset in the unnormalized-Gaussian / erf-difference form
///   (2 sigma / sqrt(2 pi)) (xi(l) - xi(u)) / (Xi(l) - Xi(u)),
///   xi(a) = exp(-(a - mu)^2 / (2 sigma^2)),  Xi(a) = erf((mu - a) / (sqrt(2) sigma)),
/// evaluated in 400-digit arithmetic. Infinite bounds give xi = 0 and Xi = -+1.
inline double erf_form_offset(double mu, double sigma, double lower, double upper)
{
    const mp_float m(mu);
    const mp_float s(sigma);
    const mp_float root2 = boost::multiprecision::sqrt(mp_float(2));
    const mp_float two_pi = 2 * boost::multiprecision::acos(mp_float(-1));
    auto xi = [&](double a) -> mp_float {
        if (std::isinf(a))
        {
            return mp_float(0);
        }
        const mp_float t = (mp_float(a) - m) / s;
        return boost::multiprecision::exp(-t * t / 2);
    };
    auto big_xi = [&](double a) -> mp_float {
        if (std::isinf(a))
        {
            return a > 0 ? mp_float(-1) : mp_float(1);
        }
        return boost::multiprecision::erf((m - mp_float(a)) / (root2 * s));
    };
    const mp_float num = xi(lower) - xi(upper);
    const mp_float den = big_xi(lower) - big_xi(upper);
    const mp_float offset = 2 * s / boost::multiprecision::sqrt(two_pi) * num / den;
    return static_cast<double>(offset);
}

/// E[(x - Q(x))^2] for x ~ N(0,1) and a mid-riser quantizer with step gamma
/// and 2^(bits-1) levels per sign: composite Simpson on each bin, outer bin
/// cut at |x| = 14.
inline double simpson_distortion(double gamma, int bits, int panels_per_bin = 400)
{
    const int n = 1 << (bits - 1);
    auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * lensem::pi); };
    double total = 0.0;
    for (int k = 1; k <= n; ++k)
    {
        const double lo = (k - 1) * gamma;
        const double hi = k < n ? k * gamma : std::max(14.0, lo + 1.0);
        const double level = (k - 0.5) * gamma;
        const int panels = k < n ? panels_per_bin : 20 * panels_per_bin;
        const double h = (hi - lo) / panels;
        double acc = 0.0;
        for (int i = 0; i <= panels; ++i)
        {
            const double x = lo + i * h;
            const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            acc += w * (x - level) * (x - level) * pdf(x);
        }
        total += acc * h / 3.0;
    }
    return 2.0 * total;
}

/// Golden-section minimization of simpson_distortion over gamma in [lo, hi].
inline double golden_section_stepsize(int bits, double lo, double hi, double tol = 1e-9)
{
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo);
    double x2 = lo + phi * (hi - lo);
    double f1 = simpson_distortion(x1, bits);
    double f2 = simpson_distortion(x2, bits);
    while (hi - lo > tol)
    {
        if (f1 < f2)
        {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = simpson_distortion(x1, bits);
        }
        else
        {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = simpson_distortion(x2, bits);
        }
    }
    return 0.5 * (lo + hi);
}

inline CMatrix eigen_kron(const CMatrix& a, const CMatrix& b)
{
    return Eigen::kroneckerProduct(a, b).eval();
}

/// sqrt(rho) F H s_t for every slot, stacked slot-major.
inline CVector physical_pipeline(const CMatrix& f, const CMatrix& h, const CMatrix& pilots, double rho)
{
    const Eigen::Index l = f.rows();
    CVector out(l * pilots.cols());
    for (Eigen::Index t = 0; t < pilots.cols(); ++t)
    {
        CVector y = CVector::Zero(l);
        for (Eigen::Index i = 0; i < l; ++i)
        {
            for (Eigen::Index m = 0; m < h.rows(); ++m)
            {
                for (Eigen::Index k = 0; k < h.cols(); ++k)
                {
                    y(i) += f(i, m) * h(m, k) * pilots(k, t);
                }
            }
        }
        out.segment(t * l, l) = std::sqrt(rho) * y;
    }
    return out;
}

/// Ridge estimate in the complex domain, solved by a QR factorization of the
/// augmented least-squares problem [Psi; sqrt(lambda) I] z = [v; 0].
inline CVector complex_ridge(const CMatrix& psi, const CVector& v, double lambda)
{
    const Eigen::Index m = psi.rows();
    const Eigen::Index n = psi.cols();
    CMatrix aug(m + n, n);
    aug.topRows(m) = psi;
    aug.bottomRows(n) = std::sqrt(lambda) * CMatrix::Identity(n, n);
    CVector rhs = CVector::Zero(m + n);
    rhs.head(m) = v;
    return aug.colPivHouseholderQr().solve(rhs);
}

} // namespace oracle

#endif // LENSEM_TESTS_ORACLES_HPP
