#ifndef LENSEM_MEASUREMENT_HPP
#define LENSEM_MEASUREMENT_HPP

// Hybrid receive model over T training slots:
//   y_t = sqrt(rho) (E_m o F) H s_t + sqrt(rho) E_a H s_t + n_t,  r = Q(y),
// stacked slot-major as y = Psi z + d + n with
//   Psi_t = sqrt(rho) (s_t^T (x) (E_m o F)) (D_T^* (x) D_R).

#include <cmath>
#include <optional>
#include <ostream>
#include <string>

#include "lensem/beamformer.hpp"
#include "lensem/channel.hpp"
#include "lensem/linalg.hpp"
#include "lensem/quantizer.hpp"
#include "lensem/rng.hpp"
#include "lensem/types.hpp"

namespace lensem
{

enum class PilotMode
{
    independent,
    repeat,
};

inline std::string to_string(PilotMode m) { return m == PilotMode::independent ? "independent" : "repeat"; }

inline PilotMode parse_pilot_mode(const std::string& s)
{
    if (s == "independent")
    {
        return PilotMode::independent;
    }
    if (s == "repeat")
    {
        return PilotMode::repeat;
    }
    throw std::invalid_argument("unknown pilot mode '" + s + "'");
}

struct PilotBlock
{
    CMatrix symbols; // L x T, unit-norm columns
    PilotMode mode = PilotMode::independent;
    double rho = 1.0;

    int slots() const noexcept { return static_cast<int>(symbols.cols()); }
};

struct SensingProblem
{
    CMatrix psi;     // (T L) x (N_R N_T)
    CVector r;       // quantized observations
    CVector y_clean; // pre-quantization signal
    CVector d_true;  // realized beamforming noise, diagnostics only
    RVector lower;   // bin bounds in real-composite order [Re; Im]
    RVector upper;
    double sigma_n_sq = 0.0;
    double sigma_d_sq = 0.0; // beamforming-noise variance per observation, as known to the receiver
    BeamNoiseCov beam_noise;
    QuantizerSpec quantizer;
    std::optional<CVector> truth;
    double rho = 1.0;
    int n_r = 0;
    int n_t = 0;
    int l_rf = 0;
    int t_slots = 0;

    Eigen::Index observations() const noexcept { return r.size(); }
    Eigen::Index unknowns() const noexcept { return psi.cols(); }
};

struct RealComposite
{
    RMatrix a_real;
    RVector v_real;
};

/// [[Re A, -Im A], [Im A, Re A]].
inline RMatrix lift(const CMatrix& a)
{
    const Eigen::Index m = a.rows();
    const Eigen::Index n = a.cols();
    RMatrix out(2 * m, 2 * n);
    out.topLeftCorner(m, n) = a.real();
    out.topRightCorner(m, n) = -a.imag();
    out.bottomLeftCorner(m, n) = a.imag();
    out.bottomRightCorner(m, n) = a.real();
    return out;
}

/// [Re v; Im v].
inline RVector lift(const CVector& v)
{
    RVector out(2 * v.size());
    out.head(v.size()) = v.real();
    out.tail(v.size()) = v.imag();
    return out;
}

inline CVector unlift(const RVector& v)
{
    detail::require(v.size() % 2 == 0, "unlift: odd length");
    const Eigen::Index n = v.size() / 2;
    CVector out(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        out(i) = {v(i), v(n + i)};
    }
    return out;
}

inline RealComposite to_real_composite(const CMatrix& psi, const CVector& v)
{
    return {lift(psi), lift(v)};
}

inline PilotBlock generate_pilots(int l, int t, PilotMode mode, double rho, Rng& rng)
{
    detail::require(l >= 1 && t >= 1, "generate_pilots: L and T must be >= 1");
    detail::require(rho > 0.0, "generate_pilots: rho must be > 0");

    auto draw = [&] {
        CVector s(l);
        for (int i = 0; i < l; ++i)
        {
            s(i) = rng.complex_normal(1.0);
        }
        return CVector(s / s.norm());
    };

    PilotBlock block;
    block.mode = mode;
    block.rho = rho;
    block.symbols.resize(l, t);
    if (mode == PilotMode::repeat)
    {
        const CVector s = draw();
        for (int k = 0; k < t; ++k)
        {
            block.symbols.col(k) = s;
        }
    }
    else
    {
        for (int k = 0; k < t; ++k)
        {
            block.symbols.col(k) = draw();
        }
    }
    return block;
}

/// Stacks sqrt(rho) (s_t^T (x) F)(D_T^* (x) D_R) over slots, using the mixed
/// product (s_t^T D_T^*) (x) (F D_R).
inline CMatrix assemble_sensing_matrix(const CMatrix& f_mult, const PilotBlock& pilots, const CMatrix& d_t,
                                       const CMatrix& d_r, double rho)
{
    detail::require(f_mult.cols() == d_r.rows() && d_r.rows() == d_r.cols(),
                    "assemble_sensing_matrix: beamformer width must equal N_R");
    detail::require(pilots.symbols.rows() == d_t.rows() && d_t.rows() == d_t.cols(),
                    "assemble_sensing_matrix: pilot length must equal N_T");
    detail::require(rho > 0.0, "assemble_sensing_matrix: rho must be > 0");

    const Eigen::Index l = f_mult.rows();
    const Eigen::Index n_r = d_r.rows();
    const Eigen::Index n_t = d_t.rows();
    const CMatrix g = std::sqrt(rho) * (f_mult * d_r);
    const CMatrix dt_conj = d_t.conjugate();

    CMatrix psi(pilots.slots() * l, n_r * n_t);
    for (int t = 0; t < pilots.slots(); ++t)
    {
        const Eigen::RowVectorXcd w = pilots.symbols.col(t).transpose() * dt_conj;
        for (Eigen::Index j = 0; j < n_t; ++j)
        {
            psi.block(t * l, j * n_r, l, n_r) = w(j) * g;
        }
    }
    return psi;
}

/// Average per-observation power of the noiseless beamformed signal,
/// rho * ||(E_m o F) H s_t||^2 / L averaged over slots.
inline double beamformed_signal_power(const CMatrix& psi, const CVector& z)
{
    return (psi * z).squaredNorm() / static_cast<double>(psi.rows());
}

/// Thermal noise variance that puts the beamformed signal at snr_db.
inline double noise_variance_for_snr(double signal_power, double snr_db)
{
    detail::require(signal_power > 0.0, "noise_variance_for_snr: signal power must be > 0");
    return signal_power / std::pow(10.0, snr_db / 10.0);
}

/// Runs the physical receive chain and quantizes. If quantizer.power <= 0 the
/// quantizer is calibrated from the empirical per-component power of y (AGC);
/// otherwise it is used as given. psi may pass in a sensing matrix already
/// assembled for the same beamformer and pilots.
inline SensingProblem forward_model(const ChannelRealization& channel, const BeamformerModel& bf,
                                    const PilotBlock& pilots, double sigma_n_sq, double sigma_d_sq,
                                    QuantizerSpec quantizer, Rng& rng, const CMatrix* psi = nullptr)
{
    const Eigen::Index n_r = channel.h_antenna.rows();
    const Eigen::Index n_t = channel.h_antenna.cols();
    const Eigen::Index l = bf.f_ideal.rows();
    detail::require(bf.f_ideal.cols() == n_r, "forward_model: beamformer width must equal N_R");
    detail::require(pilots.symbols.rows() == n_t, "forward_model: pilot length must equal N_T");
    detail::require(sigma_n_sq >= 0.0 && sigma_d_sq >= 0.0, "forward_model: negative noise variance");

    const int t_slots = pilots.slots();
    const double amp = std::sqrt(pilots.rho);
    const CMatrix f_mult = bf.f_mult();

    SensingProblem p;
    if (psi)
    {
        detail::require(psi->rows() == t_slots * l && psi->cols() == n_r * n_t,
                        "forward_model: cached sensing matrix has the wrong shape");
        p.psi = *psi;
    }
    else
    {
        p.psi = assemble_sensing_matrix(f_mult, pilots, dft_matrix(static_cast<int>(n_t)),
                                        dft_matrix(static_cast<int>(n_r)), pilots.rho);
    }
    p.y_clean.resize(t_slots * l);
    p.d_true.resize(t_slots * l);

    const CMatrix fh = f_mult * channel.h_antenna;
    const CMatrix eh = bf.e_add * channel.h_antenna;
    for (int t = 0; t < t_slots; ++t)
    {
        const CVector s = pilots.symbols.col(t);
        const CVector signal = amp * (fh * s);
        const CVector d = amp * (eh * s);
        p.d_true.segment(t * l, l) = d;
        for (Eigen::Index i = 0; i < l; ++i)
        {
            p.y_clean(t * l + i) = signal(i) + d(i) + rng.complex_normal(sigma_n_sq);
        }
    }

    if (quantizer.power <= 0.0)
    {
        const double power = p.y_clean.squaredNorm() / (2.0 * static_cast<double>(p.y_clean.size()));
        quantizer = calibrate(power, quantizer.bits);
    }
    p.quantizer = quantizer;
    p.r = quantize_complex(p.y_clean, quantizer);

    const Eigen::Index n = p.r.size();
    p.lower.resize(2 * n);
    p.upper.resize(2 * n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        const BinBounds re = bin_bounds(p.r(i).real(), quantizer);
        const BinBounds im = bin_bounds(p.r(i).imag(), quantizer);
        p.lower(i) = re.lower;
        p.upper(i) = re.upper;
        p.lower(n + i) = im.lower;
        p.upper(n + i) = im.upper;
    }

    p.sigma_n_sq = sigma_n_sq;
    p.sigma_d_sq = sigma_d_sq;
    p.truth = channel.z_vec;
    p.rho = pilots.rho;
    p.n_r = static_cast<int>(n_r);
    p.n_t = static_cast<int>(n_t);
    p.l_rf = static_cast<int>(l);
    p.t_slots = t_slots;
    return p;
}

/// Observation dump, one row per complex observation in slot-major order:
/// slot,rf,r_re,r_im,lower_re,upper_re,lower_im,upper_im.
inline void write_observations_csv(std::ostream& os, const SensingProblem& p)
{
    const auto old_precision = os.precision(17);
    const Eigen::Index n = p.r.size();
    os << "slot,rf,r_re,r_im,lower_re,upper_re,lower_im,upper_im\n";
    for (Eigen::Index i = 0; i < n; ++i)
    {
        os << i / p.l_rf << ',' << i % p.l_rf << ',' << p.r(i).real() << ',' << p.r(i).imag() << ','
           << p.lower(i) << ',' << p.upper(i) << ',' << p.lower(n + i) << ',' << p.upper(n + i) << '\n';
    }
    os.precision(old_precision);
}

/// Sensing matrix dump: one line per row of Psi (slot-major), columns
/// re/im interleaved: re_0,im_0,re_1,im_1,...
inline void write_psi_csv(std::ostream& os, const CMatrix& psi)
{
    const auto old_precision = os.precision(17);
    for (Eigen::Index i = 0; i < psi.rows(); ++i)
    {
        for (Eigen::Index j = 0; j < psi.cols(); ++j)
        {
            os << (j ? "," : "") << psi(i, j).real() << ',' << psi(i, j).imag();
        }
        os << '\n';
    }
    os.precision(old_precision);
}

} // namespace lensem

#endif // LENSEM_MEASUREMENT_HPP
