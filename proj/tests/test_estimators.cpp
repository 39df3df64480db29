#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace lensem;
using testing_helpers::random_complex;

namespace
{

const double inf = std::numeric_limits<double>::infinity();

RealSystem system_for(const CMatrix& psi, double sigma_n_sq, double sigma_d_sq)
{
    RealSystem s;
    s.op = make_lifted_operator(psi);
    s.noise = {sigma_n_sq, sigma_d_sq};
    const Eigen::Index m = s.observations();
    s.r = RVector::Zero(m);
    s.lower = RVector::Constant(m, -inf);
    s.upper = RVector::Constant(m, inf);
    return s;
}

SensingProblem problem(const ExperimentConfig& cfg, double snr_db, int bits, int trial = 0)
{
    const Scenario s = build_scenario(cfg, trial);
    return simulate_cell(cfg, s, snr_db, bits, trial);
}

} // namespace

TEST(EStep, Examples)
{
    RVector mu(3);
    mu << 0.0, 1.0, -2.0;
    RVector lo(3);
    lo << 0.0, -inf, -1.0;
    RVector hi(3);
    hi << inf, inf, 1.0;
    const EStepResult e = e_step(mu, 1.0, lo, hi);
    EXPECT_NEAR(e.b(0), std::sqrt(2.0 / pi), 1e-14);
    EXPECT_EQ(e.b(1), 0.0);
    EXPECT_NEAR(mu(2) + e.b(2), truncated_gaussian_mean(-2.0, 1.0, -1.0, 1.0), 1e-15);
    EXPECT_GT(mu(2) + e.b(2), -1.0);
    EXPECT_EQ(e.degenerate, 0);
    EXPECT_THROW(e_step(mu, 0.0, lo, hi), std::invalid_argument);
    EXPECT_THROW(e_step(mu.head(2), 1.0, lo, hi), std::invalid_argument);
}

TEST(MStep, IdentityOperatorHalvesTheTarget)
{
    const RealSystem sys = system_for(CMatrix::Identity(4, 4), 1.0, 0.0);
    const RidgeSolver solver(sys.gram(), 1.0, EmConfig{});
    RVector c(8);
    c << 1, 2, 3, 4, 5, 6, 7, 8;
    EXPECT_LT((m_step(sys, solver, c) - 0.5 * c).norm(), 1e-15);
}

TEST(MStep, SolvesTheNormalEquations)
{
    const CMatrix psi = random_complex(30, 10, 1);
    const RealSystem sys = system_for(psi, 1.0, 0.0);
    const RVector c = lift(CVector(random_complex(30, 1, 2).col(0)));
    for (double lambda : {1e-3, 0.3, 10.0})
    {
        const RidgeSolver solver(sys.gram(), lambda, EmConfig{});
        const RVector z = m_step(sys, solver, c);
        const RVector residual = sys.gram() * z + lambda * z - sys.a().transpose() * c;
        EXPECT_LT(residual.norm(), 1e-10 * c.norm()) << lambda;
        EXPECT_LT(relative_error(unlift(z), oracle::complex_ridge(psi, unlift(c), lambda)), 1e-10);
    }
}

TEST(MStep, VanishingRidgeIsLeastSquares)
{
    const CMatrix psi = random_complex(30, 10, 3);
    const RealSystem sys = system_for(psi, 1.0, 0.0);
    const CVector v = random_complex(30, 1, 4).col(0);
    const CVector ls = psi.colPivHouseholderQr().solve(v);
    EXPECT_LT(relative_error(unlift(ridge_solution(sys, lift(v), 1e-12)), ls), 1e-9);
}

TEST(RidgeSolver, DirectAndIterativeAgree)
{
    const CMatrix psi = random_complex(40, 12, 5);
    const RealSystem sys = system_for(psi, 1.0, 0.0);
    const RVector rhs = lift(CVector(random_complex(12, 1, 6).col(0)));
    EmConfig direct;
    EmConfig iterative;
    iterative.solver = SolverKind::iterative;
    const RVector a = RidgeSolver(sys.gram(), 0.1, direct).solve(rhs);
    const RVector b = RidgeSolver(sys.gram(), 0.1, iterative).solve(rhs);
    EXPECT_LT((a - b).norm(), 1e-8 * a.norm());
}

TEST(RidgeSolver, StarvedIterativeSolverThrows)
{
    const CMatrix psi = random_complex(40, 12, 7);
    const RealSystem sys = system_for(psi, 1.0, 0.0);
    EmConfig cfg;
    cfg.solver = SolverKind::iterative;
    cfg.solver_max_iters = 1;
    const RidgeSolver solver(sys.gram(), 1e-3, cfg);
    EXPECT_THROW(solver.solve(RVector::Ones(24)), SolverError);
}

TEST(RidgeSolver, SingularSystemThrows)
{
    const RealSystem sys = system_for(CMatrix::Zero(3, 3), 1.0, 0.0);
    EXPECT_THROW(RidgeSolver(sys.gram(), 0.0, EmConfig{}), SolverError);
    EXPECT_THROW(RidgeSolver(sys.gram(), -1.0, EmConfig{}), std::invalid_argument);
}

TEST(NoiseUpdate, Examples)
{
    const RealSystem sys = system_for(CMatrix::Identity(2, 2), 1.0, 3.0);
    EXPECT_DOUBLE_EQ(sys.noise.r_d_gain(), 0.75);
    RVector az(4);
    az << 1, 2, 3, 4;
    RVector y(4);
    y << 2, 2, 2, 2;
    EXPECT_EQ(noise_update(sys, NoiseUpdate::literal, az, y), 0.75 * az);
    EXPECT_EQ(noise_update(sys, NoiseUpdate::residual, az, y), RVector(0.75 * (y - az)));
    EXPECT_EQ(noise_update(sys, NoiseUpdate::off, az, y), RVector::Zero(4));
    EXPECT_EQ((NoiseModel{0.0, 0.0}.r_d_gain()), 0.0);
}

TEST(EmConfig, ParsingAndValidation)
{
    EXPECT_EQ(parse_noise_update("literal"), NoiseUpdate::literal);
    EXPECT_EQ(parse_noise_update(to_string(NoiseUpdate::residual)), NoiseUpdate::residual);
    EXPECT_EQ(parse_solver_kind("iterative"), SolverKind::iterative);
    EXPECT_THROW(parse_noise_update("sometimes"), std::invalid_argument);
    EmConfig cfg;
    cfg.max_iters = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Em, FineQuantizationReachesTheRidgeEstimate)
{
    const ExperimentConfig cfg = testing_helpers::small_config();
    SensingProblem p = problem(cfg, 10.0, 16);
    p.sigma_d_sq = 0.0;
    EmConfig em;
    em.max_iters = 200;
    em.tol = 1e-10;
    const CVector ridge = oracle::complex_ridge(p.psi, p.r, p.sigma_n_sq / em.sigma_s_sq);
    EXPECT_LT(relative_error(conventional_em(p, em).z_hat, ridge), 1e-3);
    EXPECT_LT(relative_error(robust_em(p, em).z_hat, ridge), 1e-3);
}

TEST(Em, NoiselessSquareSystemIsRecovered)
{
    ExperimentConfig cfg = testing_helpers::square_config();
    cfg.sigma_d_sq = 0.0;
    const Scenario s = build_scenario(cfg, 0);
    Rng rng(1);
    QuantizerSpec q;
    q.bits = 16;
    SensingProblem p = forward_model(s.channel, s.beamformer, s.pilots, 0.0, 0.0, q, rng, &s.psi);
    // EM needs a positive likelihood width; give it one far below the quantizer step
    p.sigma_n_sq = 1e-8 * s.signal_power;
    EmConfig em;
    em.max_iters = 200;
    em.tol = 1e-9;
    const EstimateTrace t = robust_em(p, em);
    EXPECT_LT(nmse_db(t.z_hat, *p.truth), -40.0);
    EXPECT_LT(nmse_db(lmmse(p), *p.truth), -40.0);
}

TEST(Em, LiteralFirstIterationEqualsConventional)
{
    const SensingProblem p = problem(testing_helpers::small_config(), 5.0, 3);
    EmConfig em;
    em.max_iters = 1;
    em.noise_update = NoiseUpdate::literal;
    const EstimateTrace literal = run_em(make_real_system(p), em);
    const EstimateTrace conventional = conventional_em(p, em);
    EXPECT_LT(relative_error(literal.z_hat, conventional.z_hat), 1e-14);
}

TEST(Em, WithoutBeamNoiseRobustEqualsConventional)
{
    ExperimentConfig cfg = testing_helpers::small_config();
    cfg.sigma_d_sq = 0.0;
    const SensingProblem p = problem(cfg, 5.0, 3);
    ASSERT_EQ(p.sigma_d_sq, 0.0);
    const EstimateTrace robust = robust_em(p, EmConfig{});
    const EstimateTrace conventional = conventional_em(p, EmConfig{});
    EXPECT_EQ(robust.z_hat, conventional.z_hat);
    EXPECT_EQ(robust.iterations, conventional.iterations);
    EXPECT_EQ(robust.d_hat.norm(), 0.0);
}

TEST(Em, ObjectiveNeverDecreases)
{
    const ExperimentConfig cfg = testing_helpers::small_config();
    for (int trial = 0; trial < 3; ++trial)
    {
        for (int bits : {1, 3, 5})
        {
            for (double snr : {-5.0, 15.0})
            {
                const SensingProblem p = problem(cfg, snr, bits, trial);
                for (NoiseUpdate mode : {NoiseUpdate::literal, NoiseUpdate::residual, NoiseUpdate::off})
                {
                    EmConfig em;
                    em.noise_update = mode;
                    const EstimateTrace t = run_em(make_real_system(p), em);
                    ASSERT_EQ(t.objective.size(), static_cast<std::size_t>(t.iterations) + 1);
                    EXPECT_LE(max_objective_drop(t.objective), 1e-8 * std::abs(t.objective.front()))
                        << trial << ' ' << bits << ' ' << snr << ' ' << to_string(mode);
                }
            }
        }
    }
}

TEST(Em, LiteralObjectiveRisesUnderStrongBeamNoise)
{
    // sigma_d^2 well above sigma_n^2 pushes the feedback gain g towards 1
    ExperimentConfig cfg = testing_helpers::small_config();
    cfg.sigma_d_sq = 0.5;
    for (int trial = 0; trial < 3; ++trial)
    {
        const SensingProblem p = problem(cfg, 15.0, 2, trial);
        const RealSystem sys = make_real_system(p);
        ASSERT_GT(sys.noise.r_d_gain(), 0.9);
        EmConfig em;
        em.noise_update = NoiseUpdate::literal;
        em.max_iters = 200;
        const EstimateTrace t = run_em(sys, em);
        EXPECT_LE(max_objective_drop(t.objective), 1e-8 * std::abs(t.objective.front())) << trial;
        EXPECT_LT((t.d_hat - sys.noise.r_d_gain() * (p.psi * t.z_hat)).norm(), 1e-12 * t.d_hat.norm());
    }
}

TEST(Em, ZeroNoiseVarianceIsRejected)
{
    SensingProblem p = problem(testing_helpers::small_config(), 5.0, 3);
    p.sigma_n_sq = 0.0;
    p.sigma_d_sq = 0.0;
    EXPECT_THROW(robust_em(p, EmConfig{}), SolverError);
}

TEST(Em, StarvedIterativeSolverSurfacesAsSolverError)
{
    const SensingProblem p = problem(testing_helpers::small_config(), 5.0, 3);
    EmConfig em;
    em.solver = SolverKind::iterative;
    em.solver_max_iters = 1;
    EXPECT_THROW(robust_em(p, em), SolverError);
}

TEST(Lmmse, MatchesComplexRidgeWithQuantizationNoise)
{
    const SensingProblem p = problem(testing_helpers::small_config(), 5.0, 3);
    const double qn = quantization_noise_variance(p.quantizer);
    EXPECT_NEAR(qn, 2.0 * p.quantizer.power * gaussian_distortion(p.quantizer.gamma, 3), 1e-15);
    const double lambda = (p.sigma_n_sq + p.sigma_d_sq + qn) / 0.5;
    EXPECT_LT(relative_error(lmmse(p, 0.5), oracle::complex_ridge(p.psi, p.r, lambda)), 1e-10);
    EXPECT_THROW(lmmse(p, 0.0), std::invalid_argument);
}

TEST(Lmmse, IdentityExample)
{
    RealSystem sys = system_for(CMatrix::Identity(2, 2), 0.5, 0.5);
    sys.quantizer.bits = 16;
    sys.quantizer.gamma = optimal_stepsize(16);
    sys.quantizer.power = 0.0;
    sys.r = RVector::Constant(4, 2.0);
    // ridge weight 1: z = r / 2
    const CVector z = lmmse(sys, 1.0);
    EXPECT_NEAR(std::abs(z(0) - cplx(1.0, 1.0)), 0.0, 1e-15);
}

TEST(Trace, CsvHasOneRowPerObjectiveValue)
{
    const SensingProblem p = problem(testing_helpers::small_config(), 5.0, 3);
    const EstimateTrace t = robust_em(p, EmConfig{});
    std::ostringstream os;
    write_trace_csv(os, t);
    const std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), static_cast<long>(t.objective.size()) + 1);
    EXPECT_EQ(s.rfind("iteration,objective,rel_change\n", 0), 0u);
    EXPECT_EQ(t.z_hat.size(), 135);
    EXPECT_EQ(t.d_hat.size(), p.r.size());
}

TEST(RidgeSolver, DirectAndIterativeAgreeAtFullSize)
{
    ExperimentConfig cfg;
    cfg.n_trials = 1;
    const Scenario s = build_scenario(cfg, 0);
    for (double snr : {-5.0, 15.0})
    {
        const SensingProblem p = simulate_cell(cfg, s, snr, 3, 0);
        const RealSystem sys = make_real_system(p, s.op);
        EmConfig direct = cfg.resolved_em();
        EmConfig iterative = direct;
        iterative.solver = SolverKind::iterative;
        const CVector a = robust_em(sys, direct).z_hat;
        const CVector b = robust_em(sys, iterative).z_hat;
        EXPECT_LT(relative_error(b, a), 1e-8) << snr;
    }
}
