#ifndef LENSEM_ESTIMATORS_HPP
#define LENSEM_ESTIMATORS_HPP

// EM-MAP channel estimation from quantized observations r = Q(Psi z + d + n),
// plus the conventional EM and LMMSE baselines. Everything runs on the
// real-composite system  r~ = A z~ + noise,  A = lift(Psi),  z~ = [Re z; Im z],
// with a Gaussian prior z ~ CN(0, sigma_s^2 I).
//
// Cost per EM iteration: one pass over the 2TL observations for the E-step
// and noise update, one matvec with A, and a triangular solve against the
// Cholesky factor of A^T A + lambda I, which is factored once per run.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/IterativeLinearSolvers>

#include "lensem/measurement.hpp"
#include "lensem/quantizer.hpp"
#include "lensem/truncated_normal.hpp"
#include "lensem/types.hpp"

namespace lensem
{

enum class NoiseUpdate
{
    literal,  // d = g * A z, fed back into the E-step mean
    residual, // d integrated out: E-step and ridge use sigma_n^2 + sigma_d^2, d = g * (E{y} - A z)
    off,      // d = 0, beamforming noise ignored
};

enum class SolverKind
{
    direct,
    iterative,
};

inline std::string to_string(NoiseUpdate m)
{
    switch (m)
    {
    case NoiseUpdate::literal:
        return "literal";
    case NoiseUpdate::residual:
        return "residual";
    case NoiseUpdate::off:
        return "off";
    }
    return "?";
}

inline NoiseUpdate parse_noise_update(const std::string& s)
{
    if (s == "literal")
    {
        return NoiseUpdate::literal;
    }
    if (s == "residual")
    {
        return NoiseUpdate::residual;
    }
    if (s == "off")
    {
        return NoiseUpdate::off;
    }
    throw std::invalid_argument("unknown noise update '" + s + "'");
}

inline std::string to_string(SolverKind s) { return s == SolverKind::direct ? "direct" : "iterative"; }

inline SolverKind parse_solver_kind(const std::string& s)
{
    if (s == "direct")
    {
        return SolverKind::direct;
    }
    if (s == "iterative")
    {
        return SolverKind::iterative;
    }
    throw std::invalid_argument("unknown solver '" + s + "'");
}

struct EmConfig
{
    int max_iters = 50;
    double tol = 1e-5;
    double sigma_s_sq = 1.0;
    NoiseUpdate noise_update = NoiseUpdate::literal;
    SolverKind solver = SolverKind::direct;
    double solver_tol = 1e-12;
    int solver_max_iters = 0; // 0: twice the system size
    double ill_conditioned_above = 1e12;

    void validate() const
    {
        detail::require(max_iters >= 1, "EmConfig: max_iters must be >= 1");
        detail::require(tol > 0.0, "EmConfig: tol must be > 0");
        detail::require(sigma_s_sq > 0.0, "EmConfig: sigma_s_sq must be > 0");
        detail::require(solver_tol > 0.0, "EmConfig: solver_tol must be > 0");
        detail::require(solver_max_iters >= 0, "EmConfig: solver_max_iters must be >= 0");
    }
};

struct NoiseModel
{
    double sigma_n_sq = 0.0;
    double sigma_d_sq = 0.0;

    double r_d_gain() const noexcept
    {
        const double total = sigma_d_sq + sigma_n_sq;
        return total > 0.0 ? sigma_d_sq / total : 0.0;
    }
};

struct EstimateTrace
{
    CVector z_hat;
    CVector d_hat;
    int iterations = 0;
    std::vector<double> objective; // entry 0 is the initial point
    std::vector<double> rel_change;
    bool converged = false;
    int degenerate_bins = 0;
    bool ill_conditioned = false;
};

/// Lifted sensing operator and its Gram matrix. Depends only on Psi, so one
/// instance can serve every noise level and bit depth of a realization.
struct LiftedOperator
{
    RMatrix a;    // lift(Psi)
    RMatrix gram; // A^T A
};

inline std::shared_ptr<const LiftedOperator> make_lifted_operator(const CMatrix& psi)
{
    auto op = std::make_shared<LiftedOperator>();
    op->a = lift(psi);
    // lift is multiplicative and lift(X^H) = lift(X)^T, so the Gram matrix
    // comes from the half-size complex product
    op->gram = lift(CMatrix(psi.adjoint() * psi));
    return op;
}

/// Real-composite view of a SensingProblem, shared read-only by every
/// estimator run on that problem.
struct RealSystem
{
    std::shared_ptr<const LiftedOperator> op;
    RVector r;
    RVector lower;
    RVector upper;
    NoiseModel noise;
    QuantizerSpec quantizer;

    const RMatrix& a() const noexcept { return op->a; }
    const RMatrix& gram() const noexcept { return op->gram; }
    Eigen::Index unknowns() const noexcept { return op->a.cols(); }
    Eigen::Index observations() const noexcept { return op->a.rows(); }
};

/// Pass op to reuse an operator already built for the same Psi.
inline RealSystem make_real_system(const SensingProblem& p, std::shared_ptr<const LiftedOperator> op = nullptr)
{
    RealSystem s;
    if (op)
    {
        detail::require(op->a.rows() == 2 * p.psi.rows() && op->a.cols() == 2 * p.psi.cols(),
                        "make_real_system: operator does not match the problem");
        s.op = std::move(op);
    }
    else
    {
        s.op = make_lifted_operator(p.psi);
    }
    s.r = lift(p.r);
    s.lower = p.lower;
    s.upper = p.upper;
    s.noise = {p.sigma_n_sq, p.sigma_d_sq};
    s.quantizer = p.quantizer;
    return s;
}

struct EStepResult
{
    RVector b; // posterior mean minus prior mean, per real component
    int degenerate = 0;
};

/// b_i = E[y_i | l_i < y_i <= u_i] - mu_i for y_i ~ N(mu_i, sigma_c^2).
inline EStepResult e_step(const RVector& mu, double sigma_c, const RVector& lower, const RVector& upper)
{
    detail::require(mu.size() == lower.size() && mu.size() == upper.size(), "e_step: size mismatch");
    detail::require(sigma_c > 0.0, "e_step: sigma must be > 0");
    EStepResult out;
    out.b.resize(mu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i)
    {
        bool degenerate = false;
        out.b(i) = truncated_gaussian_mean(mu(i), sigma_c, lower(i), upper(i), &degenerate) - mu(i);
        out.degenerate += degenerate ? 1 : 0;
    }
    return out;
}

/// sum_i log P(l_i < y_i <= u_i) for y_i ~ N(mu_i, sigma_c^2).
inline double quantized_log_likelihood(const RVector& mu, double sigma_c, const RVector& lower, const RVector& upper)
{
    double total = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
    {
        total += log_interval_mass(mu(i), sigma_c, lower(i), upper(i));
    }
    return total;
}

/// Solves (A^T A + lambda I) x = rhs for a fixed lambda, many right-hand sides.
class RidgeSolver
{
  public:
    RidgeSolver(const RMatrix& gram, double lambda, const EmConfig& cfg)
        : kind_(cfg.solver), tol_(cfg.solver_tol)
    {
        detail::require(gram.rows() == gram.cols(), "RidgeSolver: gram must be square");
        detail::require(lambda >= 0.0 && std::isfinite(lambda), "RidgeSolver: invalid ridge weight");
        system_ = gram;
        system_.diagonal().array() += lambda;

        if (kind_ == SolverKind::direct)
        {
            llt_.compute(system_);
            if (llt_.info() != Eigen::Success)
            {
                throw SolverError("ridge system is not positive definite (lambda = " + std::to_string(lambda) + ")");
            }
            const RVector diag = llt_.matrixLLT().diagonal().cwiseAbs();
            condition_ = std::pow(diag.maxCoeff() / diag.minCoeff(), 2);
        }
        else
        {
            cg_.setTolerance(tol_);
            cg_.setMaxIterations(cfg.solver_max_iters > 0 ? cfg.solver_max_iters
                                                          : static_cast<int>(2 * system_.rows()));
            cg_.compute(system_);
            const RVector diag = system_.diagonal();
            condition_ = diag.maxCoeff() / std::max(diag.minCoeff(), std::numeric_limits<double>::min());
        }
    }

    RVector solve(const RVector& rhs, const RVector* guess = nullptr) const
    {
        if (kind_ == SolverKind::direct)
        {
            return llt_.solve(rhs);
        }
        RVector x = guess ? cg_.solveWithGuess(rhs, *guess) : RVector(cg_.solve(rhs));
        if (cg_.info() != Eigen::Success)
        {
            throw SolverError("conjugate gradient did not reach tolerance: relative residual " +
                              std::to_string(cg_.error()) + " after " + std::to_string(cg_.iterations()) +
                              " iterations");
        }
        return x;
    }

    /// Cheap condition estimate: squared Cholesky diagonal ratio (direct) or
    /// Jacobi diagonal ratio (iterative). A lower bound on the true value.
    double condition_estimate() const noexcept { return condition_; }

  private:
    SolverKind kind_;
    double tol_;
    RMatrix system_;
    Eigen::LLT<RMatrix> llt_;
    Eigen::ConjugateGradient<RMatrix, Eigen::Lower | Eigen::Upper> cg_;
    double condition_ = 1.0;
};

/// z = (A^T A + lambda I)^{-1} A^T c.
inline RVector m_step(const RealSystem& sys, const RidgeSolver& solver, const RVector& c,
                      const RVector* guess = nullptr)
{
    detail::require(c.size() == sys.observations(), "m_step: c has the wrong length");
    return solver.solve(sys.a().transpose() * c, guess);
}

/// Closed-form ridge estimate (A^T A + lambda I)^{-1} A^T v.
inline RVector ridge_solution(const RealSystem& sys, const RVector& v, double lambda)
{
    EmConfig cfg;
    const RidgeSolver solver(sys.gram(), lambda, cfg);
    return m_step(sys, solver, v);
}

/// Beamforming-noise estimate after the M-step. y_hat is the E-step
/// posterior mean of the unquantized observations.
inline RVector noise_update(const RealSystem& sys, NoiseUpdate mode, const RVector& a_z, const RVector& y_hat)
{
    const double g = sys.noise.r_d_gain();
    switch (mode)
    {
    case NoiseUpdate::literal:
        return g * a_z;
    case NoiseUpdate::residual:
        return g * (y_hat - a_z);
    case NoiseUpdate::off:
        break;
    }
    return RVector::Zero(a_z.size());
}

namespace detail
{

inline void require_finite(const RVector& v, const char* what)
{
    if (!v.allFinite())
    {
        throw SolverError(std::string("non-finite ") + what + " iterate");
    }
}

} // namespace detail

/// EM iteration shared by the robust and conventional estimators. With
/// g = sigma_d^2 / (sigma_d^2 + sigma_n^2):
///
/// literal: d = g A z is fed back into the E-step mean. The E-step bounds
///   K(z) = sum_i log P(bin_i | (1+g) [A z]_i) / (1+g) - ||z||^2 / sigma_s^2
///   from below, and the ridge step with d lagged one iteration is a
///   splitting step on that bound with positive definite remainder
///   (1-g) A^T A + lambda I, so K cannot decrease. K is the recorded
///   objective.
/// residual: marginal EM with d integrated out. The E-step uses the total
///   per-component variance (sigma_n^2 + sigma_d^2)/2 and the ridge weight is
///   (sigma_n^2 + sigma_d^2)/sigma_s^2. The objective is the exact log
///   posterior of z.
/// off: g = 0; both of the above reduce to conventional EM.
inline EstimateTrace run_em(const RealSystem& sys, const EmConfig& cfg)
{
    cfg.validate();
    const double sn2 = sys.noise.sigma_n_sq;
    const double sd2 = cfg.noise_update == NoiseUpdate::off ? 0.0 : sys.noise.sigma_d_sq;
    const bool marginal = cfg.noise_update != NoiseUpdate::literal;
    const double sigma_e_sq = marginal ? sn2 + sd2 : sn2;
    if (!(sigma_e_sq > 0.0))
    {
        throw SolverError("EM needs a positive observation noise variance");
    }
    const double sigma_c = std::sqrt(0.5 * sigma_e_sq);
    const double lambda = sigma_e_sq / cfg.sigma_s_sq;
    const double g = marginal ? 0.0 : sys.noise.r_d_gain();
    const RidgeSolver solver(sys.gram(), lambda, cfg);

    const Eigen::Index n = sys.unknowns();
    const Eigen::Index m = sys.observations();
    RVector z = RVector::Zero(n);
    RVector d = RVector::Zero(m);
    RVector a_z = RVector::Zero(m);
    RVector y_hat = RVector::Zero(m);

    // literal mode keeps d = g A z at every recorded point, so a_z + d = (1+g) A z
    auto objective = [&](const RVector& zz, const RVector& mean) {
        return quantized_log_likelihood(mean, sigma_c, sys.lower, sys.upper) / (1.0 + g) -
               zz.squaredNorm() / cfg.sigma_s_sq;
    };

    EstimateTrace trace;
    trace.ill_conditioned = solver.condition_estimate() > cfg.ill_conditioned_above;
    trace.objective.push_back(objective(z, a_z + d));

    for (int it = 0; it < cfg.max_iters; ++it)
    {
        const RVector mu = marginal ? a_z : RVector(a_z + d);
        const EStepResult e = e_step(mu, sigma_c, sys.lower, sys.upper);
        trace.degenerate_bins += e.degenerate;
        y_hat = mu + e.b;

        const RVector c = marginal ? y_hat : RVector(y_hat - d);
        const RVector z_next = m_step(sys, solver, c, &z);
        detail::require_finite(z_next, "z");
        a_z.noalias() = sys.a() * z_next;
        if (cfg.noise_update != NoiseUpdate::residual)
        {
            d = noise_update(sys, cfg.noise_update, a_z, y_hat);
        }

        const double denom = z_next.norm();
        const double change = denom > 0.0 ? (z_next - z).norm() / denom : 0.0;
        z = z_next;
        trace.iterations = it + 1;
        trace.rel_change.push_back(change);
        trace.objective.push_back(objective(z, marginal ? a_z : RVector(a_z + d)));
        if (change < cfg.tol)
        {
            trace.converged = true;
            break;
        }
    }

    if (cfg.noise_update == NoiseUpdate::residual)
    {
        // d-estimate at the final z: the Wiener share of the posterior residual
        const RVector mu_final = a_z;
        const EStepResult e = e_step(mu_final, sigma_c, sys.lower, sys.upper);
        d = noise_update(sys, NoiseUpdate::residual, a_z, mu_final + e.b);
    }

    trace.z_hat = unlift(z);
    trace.d_hat = unlift(d);
    return trace;
}

inline EstimateTrace robust_em(const RealSystem& sys, EmConfig cfg)
{
    if (cfg.noise_update == NoiseUpdate::off)
    {
        cfg.noise_update = NoiseUpdate::literal;
    }
    return run_em(sys, cfg);
}

inline EstimateTrace conventional_em(const RealSystem& sys, EmConfig cfg)
{
    cfg.noise_update = NoiseUpdate::off;
    return run_em(sys, cfg);
}

inline EstimateTrace robust_em(const SensingProblem& p, const EmConfig& cfg)
{
    return robust_em(make_real_system(p), cfg);
}

inline EstimateTrace conventional_em(const SensingProblem& p, const EmConfig& cfg)
{
    return conventional_em(make_real_system(p), cfg);
}

/// Nominal quantization-noise variance per complex observation.
inline double quantization_noise_variance(const QuantizerSpec& q)
{
    return 2.0 * q.power * gaussian_distortion(q.gamma, q.bits);
}

/// Linear MMSE estimate treating quantization as additive white noise.
inline CVector lmmse(const RealSystem& sys, double sigma_s_sq = 1.0)
{
    detail::require(sigma_s_sq > 0.0, "lmmse: sigma_s_sq must be > 0");
    const double total = sys.noise.sigma_n_sq + sys.noise.sigma_d_sq + quantization_noise_variance(sys.quantizer);
    return unlift(ridge_solution(sys, sys.r, total / sigma_s_sq));
}

inline CVector lmmse(const SensingProblem& p, double sigma_s_sq = 1.0) { return lmmse(make_real_system(p), sigma_s_sq); }

inline void write_trace_csv(std::ostream& os, const EstimateTrace& t)
{
    const auto old_precision = os.precision(17);
    os << "iteration,objective,rel_change\n";
    for (std::size_t k = 0; k < t.objective.size(); ++k)
    {
        os << k << ',' << t.objective[k] << ',';
        if (k > 0)
        {
            os << t.rel_change[k - 1];
        }
        os << '\n';
    }
    os.precision(old_precision);
}

} // namespace lensem

#endif // LENSEM_ESTIMATORS_HPP
