#ifndef LENSEM_BEAMFORMER_HPP
#define LENSEM_BEAMFORMER_HPP

// Two-stage lens beamformer: a fixed grid of L beams (azimuth from the first
// stage, elevation from the second) and the statistical imperfection model
// F = (E_m o F_ideal) + E_a.

#include <cmath>
#include <ostream>
#include <utility>
#include <vector>

#include "lensem/channel.hpp"
#include "lensem/rng.hpp"
#include "lensem/types.hpp"

namespace lensem
{

struct LensTopology
{
    int stage1_ap = 5; // antenna ports per first-stage (azimuth) lens
    int stage1_bp = 3; // beam ports per first-stage lens
    int stage2_ap = 3; // antenna ports per second-stage (elevation) lens
    int stage2_bp = 3; // beam ports per second-stage lens

    int n_rf() const noexcept { return stage1_bp * stage2_bp; }

    // Each second-stage lens takes one beam port from every first-stage lens.
    int first_stage_lenses() const noexcept { return stage2_ap; }

    void validate() const
    {
        detail::require(stage1_ap >= 1 && stage2_ap >= 1, "LensTopology: zero antenna ports");
        detail::require(stage1_bp >= 1 && stage2_bp >= 1, "LensTopology: zero beam ports");
    }

    void validate(const UraGeometry& geom) const
    {
        validate();
        detail::require(stage1_ap * first_stage_lenses() == geom.elements(),
                        "LensTopology: stage1_ap * first-stage lens count must equal the antenna count");
    }
};

struct BeamGrid
{
    std::vector<std::pair<double, double>> directions; // (azimuth, elevation) in rad

    int size() const noexcept { return static_cast<int>(directions.size()); }
};

struct BeamformerModel
{
    CMatrix f_ideal; // L x M
    CMatrix e_mult;  // L x M, unit-modulus entries
    CMatrix e_add;   // L x M
    CMatrix f_eff;   // (e_mult o f_ideal) + e_add
    double eps_m = 0.0;
    double eps_a = 0.0;

    /// The part of the beamformer the receiver can model: E_m o F_ideal.
    CMatrix f_mult() const { return e_mult.cwiseProduct(f_ideal); }
};

struct BeamNoiseCov
{
    double sigma_d_sq = 0.0;
};

namespace detail
{

inline std::vector<double> uniform_points(int n, std::pair<double, double> sector)
{
    std::vector<double> out(n);
    if (n == 1)
    {
        out[0] = 0.5 * (sector.first + sector.second);
        return out;
    }
    for (int k = 0; k < n; ++k)
    {
        out[k] = sector.first + (sector.second - sector.first) * k / (n - 1);
    }
    return out;
}

} // namespace detail

/// Cartesian product of stage1_bp azimuths and stage2_bp elevations, each
/// uniformly spaced over its sector (endpoints included), azimuth-major.
inline BeamGrid rotman_beam_grid(const LensTopology& topology, std::pair<double, double> az_sector,
                                 std::pair<double, double> el_sector)
{
    topology.validate();
    detail::require(az_sector.first < az_sector.second && el_sector.first < el_sector.second,
                    "rotman_beam_grid: degenerate sector");

    const auto az = detail::uniform_points(topology.stage1_bp, az_sector);
    const auto el = detail::uniform_points(topology.stage2_bp, el_sector);
    BeamGrid grid;
    grid.directions.reserve(az.size() * el.size());
    for (double a : az)
    {
        for (double e : el)
        {
            grid.directions.emplace_back(a, e);
        }
    }
    return grid;
}

/// Row m is a^H(phi_m, theta_m); with normalize_rows each row has unit norm.
inline CMatrix ideal_lens_beamformer(const BeamGrid& grid, const UraGeometry& geom, bool normalize_rows = true)
{
    detail::require(grid.size() >= 1, "ideal_lens_beamformer: empty beam grid");
    const int m = geom.elements();
    const double scale = normalize_rows ? 1.0 / std::sqrt(static_cast<double>(m)) : 1.0;
    CMatrix f(grid.size(), m);
    for (int r = 0; r < grid.size(); ++r)
    {
        const auto [az, el] = grid.directions[r];
        f.row(r) = scale * ura_steering(az, el, geom).adjoint();
    }
    return f;
}

/// Draws E_m (phase errors, std eps_m) and E_a (CN(0, eps_a^2)) once and
/// assembles F = (E_m o F_ideal) + E_a. With complex_phase_noise the phase
/// exponent itself is complex Gaussian and |E_m| is no longer 1.
inline BeamformerModel apply_imperfections(const CMatrix& f_ideal, double eps_m, double eps_a, Rng& rng,
                                           bool complex_phase_noise = false)
{
    detail::require(eps_m >= 0.0 && eps_a >= 0.0, "apply_imperfections: negative imperfection level");

    BeamformerModel bf;
    bf.f_ideal = f_ideal;
    bf.eps_m = eps_m;
    bf.eps_a = eps_a;
    bf.e_mult.resize(f_ideal.rows(), f_ideal.cols());
    bf.e_add.resize(f_ideal.rows(), f_ideal.cols());

    for (Eigen::Index s = 0; s < f_ideal.cols(); ++s)
    {
        for (Eigen::Index r = 0; r < f_ideal.rows(); ++r)
        {
            if (complex_phase_noise)
            {
                const cplx delta = rng.complex_normal(eps_m * eps_m);
                bf.e_mult(r, s) = std::exp(cplx{0.0, 1.0} * delta);
            }
            else
            {
                bf.e_mult(r, s) = std::polar(1.0, eps_m * rng.normal());
            }
        }
    }
    for (Eigen::Index s = 0; s < f_ideal.cols(); ++s)
    {
        for (Eigen::Index r = 0; r < f_ideal.rows(); ++r)
        {
            bf.e_add(r, s) = rng.complex_normal(eps_a * eps_a);
        }
    }
    bf.f_eff = bf.f_mult() + bf.e_add;
    return bf;
}

/// sigma_d^2 = sigma_alpha^2 * eps_a^2 (diagonal approximation of the
/// beamforming-noise covariance).
inline BeamNoiseCov beamforming_noise_covariance(double sigma_alpha_sq, double eps_a)
{
    detail::require(sigma_alpha_sq >= 0.0 && eps_a >= 0.0, "beamforming_noise_covariance: negative input");
    return {sigma_alpha_sq * eps_a * eps_a};
}

inline void write_matrix_csv(std::ostream& os, const CMatrix& m)
{
    const auto old_precision = os.precision(17);
    os << "row,col,re,im\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            os << i << ',' << j << ',' << m(i, j).real() << ',' << m(i, j).imag() << '\n';
        }
    }
    os.precision(old_precision);
}

} // namespace lensem

#endif // LENSEM_BEAMFORMER_HPP
