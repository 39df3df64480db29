#ifndef LENSEM_CHANNEL_HPP
#define LENSEM_CHANNEL_HPP

// Ground-truth mmWave channels: multipath URA model in the antenna domain and
// its unitary-DFT beamspace representation H = D_R Z D_T^H.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <utility>
#include <vector>

#include "lensem/linalg.hpp"
#include "lensem/rng.hpp"
#include "lensem/types.hpp"

namespace lensem
{

struct UraGeometry
{
    int n_az = 5;
    int n_el = 3;
    double spacing = 0.5; // wavelengths
    double carrier_hz = 28e9;

    int elements() const noexcept { return n_az * n_el; }

    void validate() const
    {
        detail::require(n_az >= 1 && n_el >= 1, "UraGeometry: element counts must be >= 1");
        detail::require(spacing > 0.0 && std::isfinite(spacing), "UraGeometry: spacing must be > 0");
    }
};

using ElementGain = std::function<double(double azimuth, double elevation)>;

inline double isotropic_element_gain(double, double) noexcept { return 1.0; }

/// Optional cosine-tapered element pattern.
inline double cosine_element_gain(double azimuth, double elevation) noexcept
{
    return std::cos(azimuth) * std::cos(elevation);
}

struct MultipathParams
{
    int n_clusters = 4;
    int subpaths_per_cluster = 5;
    double path_gain_variance = 1.0;
    ElementGain element_gain = isotropic_element_gain;
    double shadow_sigma_db = 0.0;
    double path_loss_exponent = 2.0;
    double ref_distance = 1.0;  // m
    double user_distance = 1.0; // m
    double angle_spread_deg = 5.0;
    std::pair<double, double> az_sector_deg{-60.0, 60.0};
    std::pair<double, double> el_sector_deg{-30.0, 30.0};

    int n_paths() const noexcept { return n_clusters * subpaths_per_cluster; }

    void validate() const
    {
        detail::require(n_clusters >= 0 && subpaths_per_cluster >= 0, "MultipathParams: negative counts");
        detail::require(n_paths() > 0, "MultipathParams: number of paths must be positive");
        detail::require(path_gain_variance > 0.0, "MultipathParams: path_gain_variance must be > 0");
        detail::require(ref_distance > 0.0, "MultipathParams: ref_distance must be > 0");
        detail::require(user_distance >= ref_distance, "MultipathParams: user_distance < ref_distance");
        detail::require(shadow_sigma_db >= 0.0 && angle_spread_deg >= 0.0, "MultipathParams: negative spread");
        detail::require(static_cast<bool>(element_gain), "MultipathParams: element_gain not set");
    }
};

struct SparsityParams
{
    double activity_prob = 0.1;
    double active_variance = 1.0;

    void validate() const
    {
        detail::require(activity_prob > 0.0 && activity_prob <= 1.0, "SparsityParams: activity_prob not in (0,1]");
        detail::require(active_variance > 0.0, "SparsityParams: active_variance must be > 0");
    }
};

struct PathComponent
{
    double azimuth = 0.0;   // rad
    double elevation = 0.0; // rad
    cplx gain{1.0, 0.0};    // complex path gain alpha
};

struct ChannelRealization
{
    CMatrix h_antenna;   // N_R x N_T
    CMatrix z_beamspace; // N_R x N_T
    CVector z_vec;       // vec(Z)
    std::vector<std::vector<PathComponent>> paths; // per terminal; empty for synthetic beamspace draws
};

/// Far-field URA response. Element (p, q) sits at index p * n_el + q and has
/// phase 2*pi*spacing*(p sin(phi) cos(theta) + q sin(theta)).
inline CVector ura_steering(double phi, double theta, const UraGeometry& geom)
{
    geom.validate();
    detail::require(std::isfinite(phi) && std::isfinite(theta), "ura_steering: non-finite angle");
    detail::require(std::abs(phi) <= pi / 2 + 1e-12 && std::abs(theta) <= pi / 2 + 1e-12,
                    "ura_steering: angle outside [-pi/2, pi/2]");

    CVector a(geom.elements());
    const double kx = 2.0 * pi * geom.spacing * std::sin(phi) * std::cos(theta);
    const double ky = 2.0 * pi * geom.spacing * std::sin(theta);
    for (int p = 0; p < geom.n_az; ++p)
    {
        for (int q = 0; q < geom.n_el; ++q)
        {
            a(p * geom.n_el + q) = std::polar(1.0, kx * p + ky * q);
        }
    }
    return a;
}

/// Unitary DFT matrix, entry (k, l) = exp(-j 2 pi k l / n) / sqrt(n).
inline CMatrix dft_matrix(int n)
{
    detail::require(n >= 1, "dft_matrix: n must be >= 1");
    CMatrix d(n, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < n; ++k)
    {
        for (int l = 0; l < n; ++l)
        {
            // reduce k*l mod n first so large products keep full phase precision
            const double phase = -2.0 * pi * static_cast<double>((k * l) % n) / n;
            d(k, l) = std::polar(scale, phase);
        }
    }
    return d;
}

struct ComposedChannel
{
    CMatrix h;
    CVector h_vec;
};

/// H = D_R Z D_T^H and vec(H) = (D_T^* (x) D_R) vec(Z).
inline ComposedChannel beamspace_compose(const CMatrix& z)
{
    detail::require(z.rows() >= 1 && z.cols() >= 1, "beamspace_compose: empty matrix");
    const CMatrix dr = dft_matrix(static_cast<int>(z.rows()));
    const CMatrix dt = dft_matrix(static_cast<int>(z.cols()));
    ComposedChannel out;
    out.h = dr * z * dt.adjoint();
    out.h_vec = vec(out.h);
    return out;
}

/// Z = D_R^H H D_T.
inline CMatrix beamspace_decompose(const CMatrix& h)
{
    detail::require(h.rows() >= 1 && h.cols() >= 1, "beamspace_decompose: empty matrix");
    const CMatrix dr = dft_matrix(static_cast<int>(h.rows()));
    const CMatrix dt = dft_matrix(static_cast<int>(h.cols()));
    return dr.adjoint() * h * dt;
}

/// One terminal's antenna-domain column: (1/sqrt(N_P)) sum_p alpha_p Lambda(phi_p, theta_p) a*(phi_p, theta_p).
inline CVector multipath_column(const std::vector<PathComponent>& paths, const UraGeometry& geom,
                                const ElementGain& element_gain = isotropic_element_gain)
{
    detail::require(!paths.empty(), "multipath_column: no paths");
    CVector h = CVector::Zero(geom.elements());
    for (const auto& p : paths)
    {
        h += p.gain * element_gain(p.azimuth, p.elevation) * ura_steering(p.azimuth, p.elevation, geom).conjugate();
    }
    return h / std::sqrt(static_cast<double>(paths.size()));
}

inline ChannelRealization realization_from_antenna(CMatrix h, std::vector<std::vector<PathComponent>> paths = {})
{
    ChannelRealization out;
    out.z_beamspace = beamspace_decompose(h);
    out.z_vec = vec(out.z_beamspace);
    out.h_antenna = std::move(h);
    out.paths = std::move(paths);
    return out;
}

inline ChannelRealization generate_multipath_channel(const MultipathParams& params, const UraGeometry& geom,
                                                     int n_terminals, Rng& rng)
{
    params.validate();
    geom.validate();
    detail::require(n_terminals >= 1, "generate_multipath_channel: n_terminals must be >= 1");

    const double half_pi = pi / 2;
    CMatrix h(geom.elements(), n_terminals);
    std::vector<std::vector<PathComponent>> paths(n_terminals);

    for (int l = 0; l < n_terminals; ++l)
    {
        const double shadow_db = params.shadow_sigma_db * rng.normal();
        const double zeta = std::pow(10.0, shadow_db / 10.0);
        const double beta = zeta * std::pow(params.ref_distance / params.user_distance, params.path_loss_exponent);

        auto& terminal_paths = paths[l];
        terminal_paths.reserve(params.n_paths());
        for (int c = 0; c < params.n_clusters; ++c)
        {
            const double az_c = rng.uniform(params.az_sector_deg.first, params.az_sector_deg.second);
            const double el_c = rng.uniform(params.el_sector_deg.first, params.el_sector_deg.second);
            for (int s = 0; s < params.subpaths_per_cluster; ++s)
            {
                PathComponent p;
                p.azimuth = std::clamp(deg2rad(az_c + params.angle_spread_deg * rng.normal()), -half_pi, half_pi);
                p.elevation = std::clamp(deg2rad(el_c + params.angle_spread_deg * rng.normal()), -half_pi, half_pi);
                p.gain = rng.complex_normal(params.path_gain_variance * beta);
                terminal_paths.push_back(p);
            }
        }
        h.col(l) = multipath_column(terminal_paths, geom, params.element_gain);
    }
    return realization_from_antenna(std::move(h), std::move(paths));
}

inline ChannelRealization generate_bernoulli_gaussian_beamspace(const SparsityParams& params, int n_r, int n_t,
                                                                Rng& rng)
{
    params.validate();
    detail::require(n_r >= 1 && n_t >= 1, "generate_bernoulli_gaussian_beamspace: empty shape");

    CMatrix z = CMatrix::Zero(n_r, n_t);
    for (int j = 0; j < n_t; ++j)
    {
        for (int i = 0; i < n_r; ++i)
        {
            // the activity draw is always consumed so realizations stay aligned across activity levels
            const bool active = rng.bernoulli(params.activity_prob);
            const cplx value = rng.complex_normal(params.active_variance);
            if (active)
            {
                z(i, j) = value;
            }
        }
    }
    ChannelRealization out;
    out.h_antenna = beamspace_compose(z).h;
    out.z_vec = vec(z);
    out.z_beamspace = std::move(z);
    return out;
}

/// CSV dump: domain,row,col,re,im with domain in {H, Z}.
inline void write_channel_csv(std::ostream& os, const ChannelRealization& ch)
{
    const auto old_precision = os.precision(17);
    os << "domain,row,col,re,im\n";
    auto dump = [&](const char* tag, const CMatrix& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
            {
                os << tag << ',' << i << ',' << j << ',' << m(i, j).real() << ',' << m(i, j).imag() << '\n';
            }
        }
    };
    dump("H", ch.h_antenna);
    dump("Z", ch.z_beamspace);
    os.precision(old_precision);
}

} // namespace lensem

#endif // LENSEM_CHANNEL_HPP
