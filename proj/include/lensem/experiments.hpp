#ifndef LENSEM_EXPERIMENTS_HPP
#define LENSEM_EXPERIMENTS_HPP

// Monte Carlo harness: configuration, per-trial seeding, paired estimator
// runs, NMSE aggregation and CSV/SVG output.
//
// Seeding. Each trial draws its scenario (channel, beamformer imperfections,
// pilots) from mix(master, "scen", trial) and its thermal noise from
// mix(master, "noise", round(1000 * snr_db), bits, trial). All SNR points and
// bit depths of a trial therefore share one scenario, and adding grid points
// never changes the draws of existing cells.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lensem/beamformer.hpp"
#include "lensem/channel.hpp"
#include "lensem/estimators.hpp"
#include "lensem/measurement.hpp"
#include "lensem/quantizer.hpp"
#include "lensem/rng.hpp"
#include "lensem/types.hpp"

namespace lensem
{

inline constexpr int config_schema_version = 1;

enum class ChannelMode
{
    multipath,
    bernoulli_gaussian,
};

inline std::string to_string(ChannelMode m) { return m == ChannelMode::multipath ? "multipath" : "bernoulli-gaussian"; }

inline const std::vector<std::string>& known_estimators()
{
    static const std::vector<std::string> names = {"robust_em", "conventional_em", "lmmse"};
    return names;
}

struct ExperimentConfig
{
    std::vector<double> snr_grid_db = {-5.0, -2.5, 0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0};
    std::vector<int> bits_list = {3, 4, 5};
    int n_trials = 100;
    int t_slots = 200;
    int n_r = 15;
    int n_t = 9;
    int l_rf = 9;
    double sigma_d_sq = 0.012; // sigma_alpha^2 * eps_a^2
    ChannelMode channel_mode = ChannelMode::multipath;
    std::vector<std::string> estimators = known_estimators();
    std::uint64_t seed = 20240607;
    std::string output_dir = "out";
    int threads = 0; // 0: hardware concurrency
    bool record_wall_time = false;

    UraGeometry geometry;
    LensTopology topology;
    std::pair<double, double> beam_az_sector_deg{-45.0, 45.0};
    std::pair<double, double> beam_el_sector_deg{-30.0, 30.0};
    bool normalize_rows = true;
    double eps_m = 0.1;
    bool complex_phase_noise = false;

    MultipathParams multipath;
    std::string element_gain = "isotropic";
    SparsityParams sparsity;

    double rho = 0.01;
    PilotMode pilot_mode = PilotMode::independent;

    EmConfig em;
    bool sigma_s_sq_from_prior = true; // em.sigma_s_sq follows prior_variance() unless set explicitly

    /// eps_a implied by sigma_d^2 = sigma_alpha^2 eps_a^2.
    double eps_a() const { return std::sqrt(sigma_d_sq / multipath.path_gain_variance); }

    /// Per-entry prior variance E|z_ij|^2 of the generated channel.
    double prior_variance() const
    {
        if (channel_mode == ChannelMode::bernoulli_gaussian)
        {
            return sparsity.activity_prob * sparsity.active_variance;
        }
        const double s = multipath.shadow_sigma_db * std::log(10.0) / 10.0;
        const double mean_zeta = std::exp(0.5 * s * s);
        const double path_loss = std::pow(multipath.ref_distance / multipath.user_distance, multipath.path_loss_exponent);
        return multipath.path_gain_variance * mean_zeta * path_loss;
    }

    /// Variance of one entry of the beamforming noise sqrt(rho) E_a H s_t as
    /// seen by the receiver: rho * eps_a^2 * N_R * E|h_ij|^2 for unit-norm s_t.
    double observed_beam_noise_variance() const
    {
        const double eps = eps_a();
        return rho * eps * eps * n_r * prior_variance();
    }

    EmConfig resolved_em() const
    {
        EmConfig out = em;
        if (sigma_s_sq_from_prior)
        {
            out.sigma_s_sq = prior_variance();
        }
        return out;
    }

    void validate() const
    {
        auto check = [](bool ok, const std::string& what) {
            if (!ok)
            {
                throw ConfigError(what);
            }
        };
        check(!snr_grid_db.empty(), "snr_grid_db must not be empty");
        for (double s : snr_grid_db)
        {
            check(std::isfinite(s), "snr_grid_db entries must be finite");
        }
        check(std::set<double>(snr_grid_db.begin(), snr_grid_db.end()).size() == snr_grid_db.size(),
              "snr_grid_db entries must be distinct");
        check(!bits_list.empty(), "bits_list must not be empty");
        for (int b : bits_list)
        {
            check(b >= 1 && b <= max_quantizer_bits, "bits_list entries must be in [1, 16]");
        }
        check(std::set<int>(bits_list.begin(), bits_list.end()).size() == bits_list.size(),
              "bits_list entries must be distinct");
        check(n_trials >= 1 && t_slots >= 1 && n_r >= 1 && n_t >= 1 && l_rf >= 1, "all counts must be >= 1");
        check(threads >= 0, "threads must be >= 0");
        check(n_r == geometry.elements(), "n_r must equal array.n_az * array.n_el");
        check(n_t == l_rf, "n_t must equal l_rf (one single-antenna terminal per RF chain)");
        check(l_rf == topology.n_rf(), "l_rf must equal lens.stage1_bp * lens.stage2_bp");
        check(sigma_d_sq >= 0.0, "sigma_d_sq must be >= 0");
        check(eps_m >= 0.0, "eps_m must be >= 0");
        check(rho > 0.0, "rho must be > 0");
        check(!estimators.empty(), "estimators must not be empty");
        for (const auto& e : estimators)
        {
            const auto& k = known_estimators();
            check(std::find(k.begin(), k.end(), e) != k.end(), "unknown estimator '" + e + "'");
        }
        check(std::set<std::string>(estimators.begin(), estimators.end()).size() == estimators.size(),
              "estimators must be distinct");
        try
        {
            geometry.validate();
            topology.validate(geometry);
            multipath.validate();
            sparsity.validate();
            em.validate();
        }
        catch (const std::invalid_argument& e)
        {
            throw ConfigError(e.what());
        }
        check(beam_az_sector_deg.first < beam_az_sector_deg.second &&
                  beam_el_sector_deg.first < beam_el_sector_deg.second,
              "beam sectors must be non-degenerate");
    }
};

namespace detail
{

using nlohmann::json;

inline void reject_unknown_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object())
    {
        throw ConfigError(where + " must be an object");
    }
    for (const auto& item : j.items())
    {
        const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
        if (!ok)
        {
            throw ConfigError("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
void read_key(const json& j, const char* key, T& out)
{
    if (j.contains(key))
    {
        out = j.at(key).get<T>();
    }
}

inline void read_sector(const json& j, const char* key, std::pair<double, double>& out)
{
    if (j.contains(key))
    {
        const auto v = j.at(key).get<std::vector<double>>();
        if (v.size() != 2)
        {
            throw ConfigError(std::string(key) + " must have two entries");
        }
        out = {v[0], v[1]};
    }
}

} // namespace detail

/// Parses a JSON config. Missing keys keep their defaults; unknown keys are
/// rejected so typos do not silently fall back to defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    using detail::read_key;
    using detail::read_sector;
    ExperimentConfig cfg;
    try
    {
        detail::reject_unknown_keys(j, "config",
                                    {"schema_version", "seed", "n_trials", "snr_grid_db", "bits_list", "estimators",
                                     "output_dir", "threads", "record_wall_time", "t_slots", "n_r", "n_t", "l_rf",
                                     "sigma_d_sq", "channel_mode", "array", "lens", "channel", "impairments",
                                     "training", "em"});
        if (!j.contains("schema_version"))
        {
            throw ConfigError("missing schema_version");
        }
        const int version = j.at("schema_version").get<int>();
        if (version != config_schema_version)
        {
            throw ConfigError("unsupported schema_version " + std::to_string(version));
        }
        read_key(j, "seed", cfg.seed);
        read_key(j, "n_trials", cfg.n_trials);
        read_key(j, "snr_grid_db", cfg.snr_grid_db);
        read_key(j, "bits_list", cfg.bits_list);
        read_key(j, "estimators", cfg.estimators);
        read_key(j, "output_dir", cfg.output_dir);
        read_key(j, "threads", cfg.threads);
        read_key(j, "record_wall_time", cfg.record_wall_time);
        read_key(j, "t_slots", cfg.t_slots);
        read_key(j, "n_r", cfg.n_r);
        read_key(j, "n_t", cfg.n_t);
        read_key(j, "l_rf", cfg.l_rf);
        read_key(j, "sigma_d_sq", cfg.sigma_d_sq);
        if (j.contains("channel_mode"))
        {
            const auto m = j.at("channel_mode").get<std::string>();
            if (m == "multipath")
            {
                cfg.channel_mode = ChannelMode::multipath;
            }
            else if (m == "bernoulli-gaussian")
            {
                cfg.channel_mode = ChannelMode::bernoulli_gaussian;
            }
            else
            {
                throw ConfigError("unknown channel_mode '" + m + "'");
            }
        }

        if (j.contains("array"))
        {
            const auto& a = j.at("array");
            detail::reject_unknown_keys(a, "array", {"n_az", "n_el", "spacing", "carrier_hz"});
            read_key(a, "n_az", cfg.geometry.n_az);
            read_key(a, "n_el", cfg.geometry.n_el);
            read_key(a, "spacing", cfg.geometry.spacing);
            read_key(a, "carrier_hz", cfg.geometry.carrier_hz);
        }
        if (j.contains("lens"))
        {
            const auto& l = j.at("lens");
            detail::reject_unknown_keys(l, "lens",
                                        {"stage1_ap", "stage1_bp", "stage2_ap", "stage2_bp", "az_sector_deg",
                                         "el_sector_deg", "normalize_rows"});
            read_key(l, "stage1_ap", cfg.topology.stage1_ap);
            read_key(l, "stage1_bp", cfg.topology.stage1_bp);
            read_key(l, "stage2_ap", cfg.topology.stage2_ap);
            read_key(l, "stage2_bp", cfg.topology.stage2_bp);
            read_sector(l, "az_sector_deg", cfg.beam_az_sector_deg);
            read_sector(l, "el_sector_deg", cfg.beam_el_sector_deg);
            read_key(l, "normalize_rows", cfg.normalize_rows);
        }
        if (j.contains("channel"))
        {
            const auto& c = j.at("channel");
            detail::reject_unknown_keys(c, "channel",
                                        {"n_clusters", "subpaths_per_cluster", "path_gain_variance", "shadow_sigma_db",
                                         "path_loss_exponent", "ref_distance", "user_distance", "angle_spread_deg",
                                         "az_sector_deg", "el_sector_deg", "element_gain", "activity_prob",
                                         "active_variance"});
            auto& m = cfg.multipath;
            read_key(c, "n_clusters", m.n_clusters);
            read_key(c, "subpaths_per_cluster", m.subpaths_per_cluster);
            read_key(c, "path_gain_variance", m.path_gain_variance);
            read_key(c, "shadow_sigma_db", m.shadow_sigma_db);
            read_key(c, "path_loss_exponent", m.path_loss_exponent);
            read_key(c, "ref_distance", m.ref_distance);
            read_key(c, "user_distance", m.user_distance);
            read_key(c, "angle_spread_deg", m.angle_spread_deg);
            read_sector(c, "az_sector_deg", m.az_sector_deg);
            read_sector(c, "el_sector_deg", m.el_sector_deg);
            read_key(c, "element_gain", cfg.element_gain);
            if (cfg.element_gain == "isotropic")
            {
                m.element_gain = isotropic_element_gain;
            }
            else if (cfg.element_gain == "cosine")
            {
                m.element_gain = cosine_element_gain;
            }
            else
            {
                throw ConfigError("unknown element_gain '" + cfg.element_gain + "'");
            }
            read_key(c, "activity_prob", cfg.sparsity.activity_prob);
            read_key(c, "active_variance", cfg.sparsity.active_variance);
        }
        if (j.contains("impairments"))
        {
            const auto& im = j.at("impairments");
            detail::reject_unknown_keys(im, "impairments", {"eps_m", "complex_phase_noise"});
            read_key(im, "eps_m", cfg.eps_m);
            read_key(im, "complex_phase_noise", cfg.complex_phase_noise);
        }
        if (j.contains("training"))
        {
            const auto& t = j.at("training");
            detail::reject_unknown_keys(t, "training", {"rho", "pilot_mode"});
            read_key(t, "rho", cfg.rho);
            if (t.contains("pilot_mode"))
            {
                cfg.pilot_mode = parse_pilot_mode(t.at("pilot_mode").get<std::string>());
            }
        }
        if (j.contains("em"))
        {
            const auto& e = j.at("em");
            detail::reject_unknown_keys(e, "em",
                                        {"max_iters", "tol", "sigma_s_sq", "noise_update", "solver", "solver_tol",
                                         "solver_max_iters"});
            read_key(e, "max_iters", cfg.em.max_iters);
            read_key(e, "tol", cfg.em.tol);
            if (e.contains("sigma_s_sq") && !e.at("sigma_s_sq").is_null())
            {
                cfg.em.sigma_s_sq = e.at("sigma_s_sq").get<double>();
                cfg.sigma_s_sq_from_prior = false;
            }
            if (e.contains("noise_update"))
            {
                cfg.em.noise_update = parse_noise_update(e.at("noise_update").get<std::string>());
            }
            if (e.contains("solver"))
            {
                cfg.em.solver = parse_solver_kind(e.at("solver").get<std::string>());
            }
            read_key(e, "solver_tol", cfg.em.solver_tol);
            read_key(e, "solver_max_iters", cfg.em.solver_max_iters);
        }
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    catch (const std::invalid_argument& e)
    {
        throw ConfigError(e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ConfigError("cannot open config file " + path.string());
    }
    nlohmann::json j;
    try
    {
        in >> j;
    }
    catch (const nlohmann::json::exception& e)
    {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg)
{
    nlohmann::json j;
    j["schema_version"] = config_schema_version;
    j["seed"] = cfg.seed;
    j["n_trials"] = cfg.n_trials;
    j["snr_grid_db"] = cfg.snr_grid_db;
    j["bits_list"] = cfg.bits_list;
    j["estimators"] = cfg.estimators;
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    j["record_wall_time"] = cfg.record_wall_time;
    j["t_slots"] = cfg.t_slots;
    j["n_r"] = cfg.n_r;
    j["n_t"] = cfg.n_t;
    j["l_rf"] = cfg.l_rf;
    j["sigma_d_sq"] = cfg.sigma_d_sq;
    j["channel_mode"] = to_string(cfg.channel_mode);
    j["array"] = {{"n_az", cfg.geometry.n_az},
                  {"n_el", cfg.geometry.n_el},
                  {"spacing", cfg.geometry.spacing},
                  {"carrier_hz", cfg.geometry.carrier_hz}};
    j["lens"] = {{"stage1_ap", cfg.topology.stage1_ap},
                 {"stage1_bp", cfg.topology.stage1_bp},
                 {"stage2_ap", cfg.topology.stage2_ap},
                 {"stage2_bp", cfg.topology.stage2_bp},
                 {"az_sector_deg", {cfg.beam_az_sector_deg.first, cfg.beam_az_sector_deg.second}},
                 {"el_sector_deg", {cfg.beam_el_sector_deg.first, cfg.beam_el_sector_deg.second}},
                 {"normalize_rows", cfg.normalize_rows}};
    const auto& m = cfg.multipath;
    j["channel"] = {{"n_clusters", m.n_clusters},
                    {"subpaths_per_cluster", m.subpaths_per_cluster},
                    {"path_gain_variance", m.path_gain_variance},
                    {"shadow_sigma_db", m.shadow_sigma_db},
                    {"path_loss_exponent", m.path_loss_exponent},
                    {"ref_distance", m.ref_distance},
                    {"user_distance", m.user_distance},
                    {"angle_spread_deg", m.angle_spread_deg},
                    {"az_sector_deg", {m.az_sector_deg.first, m.az_sector_deg.second}},
                    {"el_sector_deg", {m.el_sector_deg.first, m.el_sector_deg.second}},
                    {"element_gain", cfg.element_gain},
                    {"activity_prob", cfg.sparsity.activity_prob},
                    {"active_variance", cfg.sparsity.active_variance}};
    j["impairments"] = {{"eps_m", cfg.eps_m}, {"complex_phase_noise", cfg.complex_phase_noise}};
    j["training"] = {{"rho", cfg.rho}, {"pilot_mode", to_string(cfg.pilot_mode)}};
    j["em"] = {{"max_iters", cfg.em.max_iters},
               {"tol", cfg.em.tol},
               {"sigma_s_sq", cfg.sigma_s_sq_from_prior ? nlohmann::json(nullptr) : nlohmann::json(cfg.em.sigma_s_sq)},
               {"noise_update", to_string(cfg.em.noise_update)},
               {"solver", to_string(cfg.em.solver)},
               {"solver_tol", cfg.em.solver_tol},
               {"solver_max_iters", cfg.em.solver_max_iters}};
    return j;
}

struct ResultRecord
{
    double snr_db = 0.0;
    int bits = 0;
    std::string estimator;
    int trial_index = 0;
    double nmse_db = 0.0;
    int iterations = 0;
    double wall_time_ms = 0.0;
    // diagnostics, not part of raw.csv
    double objective_drop = 0.0; // largest decrease between consecutive EM objective values
    bool converged = true;
};

/// Largest decrease between consecutive entries; 0 for a non-decreasing sequence.
inline double max_objective_drop(const std::vector<double>& objective)
{
    double drop = 0.0;
    for (std::size_t k = 1; k < objective.size(); ++k)
    {
        drop = std::max(drop, objective[k - 1] - objective[k]);
    }
    return drop;
}

struct FailureRecord
{
    double snr_db = 0.0;
    int bits = 0;
    std::string estimator;
    int trial_index = 0;
    std::string message;
};

inline constexpr double nmse_floor_db = -100.0;

inline double nmse_linear(const CVector& z_hat, const CVector& z_true)
{
    detail::require(z_hat.size() == z_true.size(), "nmse: length mismatch");
    const double den = z_true.squaredNorm();
    detail::require(den > 0.0, "nmse: reference has zero norm");
    return (z_hat - z_true).squaredNorm() / den;
}

/// 10 log10(||z_hat - z||^2 / ||z||^2), floored at -100 dB.
inline double nmse_db(const CVector& z_hat, const CVector& z_true)
{
    const double v = nmse_linear(z_hat, z_true);
    return v > 0.0 ? std::max(10.0 * std::log10(v), nmse_floor_db) : nmse_floor_db;
}

inline std::uint64_t scenario_seed(std::uint64_t master, int trial)
{
    return mix_seed({master, 0x7363656eULL, static_cast<std::uint64_t>(trial)});
}

inline std::uint64_t noise_seed(std::uint64_t master, double snr_db, int bits, int trial)
{
    const auto snr_key = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(snr_db * 1000.0)));
    return mix_seed({master, 0x6e6f6973ULL, snr_key, static_cast<std::uint64_t>(bits),
                     static_cast<std::uint64_t>(trial)});
}

/// Everything about a trial that does not depend on SNR or bit depth.
struct Scenario
{
    ChannelRealization channel;
    BeamformerModel beamformer;
    PilotBlock pilots;
    CMatrix psi;
    std::shared_ptr<const LiftedOperator> op;
    double signal_power = 0.0; // per observation, noiseless and without beamforming noise
};

inline Scenario build_scenario(const ExperimentConfig& cfg, int trial)
{
    Rng rng(scenario_seed(cfg.seed, trial));
    Scenario s;
    if (cfg.channel_mode == ChannelMode::multipath)
    {
        s.channel = generate_multipath_channel(cfg.multipath, cfg.geometry, cfg.n_t, rng);
    }
    else
    {
        s.channel = generate_bernoulli_gaussian_beamspace(cfg.sparsity, cfg.n_r, cfg.n_t, rng);
    }
    const BeamGrid grid = rotman_beam_grid(cfg.topology,
                                           {deg2rad(cfg.beam_az_sector_deg.first), deg2rad(cfg.beam_az_sector_deg.second)},
                                           {deg2rad(cfg.beam_el_sector_deg.first), deg2rad(cfg.beam_el_sector_deg.second)});
    const CMatrix f_ideal = ideal_lens_beamformer(grid, cfg.geometry, cfg.normalize_rows);
    s.beamformer = apply_imperfections(f_ideal, cfg.eps_m, cfg.eps_a(), rng, cfg.complex_phase_noise);
    s.pilots = generate_pilots(cfg.l_rf, cfg.t_slots, cfg.pilot_mode, cfg.rho, rng);
    s.psi = assemble_sensing_matrix(s.beamformer.f_mult(), s.pilots, dft_matrix(cfg.n_t), dft_matrix(cfg.n_r), cfg.rho);
    s.op = make_lifted_operator(s.psi);
    s.signal_power = beamformed_signal_power(s.psi, s.channel.z_vec);
    return s;
}

/// Draws noise, quantizes and returns the problem for one (SNR, bits) cell.
inline SensingProblem simulate_cell(const ExperimentConfig& cfg, const Scenario& s, double snr_db, int bits, int trial)
{
    Rng rng(noise_seed(cfg.seed, snr_db, bits, trial));
    const double sigma_n_sq = noise_variance_for_snr(s.signal_power, snr_db);
    QuantizerSpec q;
    q.bits = bits;
    SensingProblem p = forward_model(s.channel, s.beamformer, s.pilots, sigma_n_sq,
                                     cfg.observed_beam_noise_variance(), q, rng, &s.psi);
    p.beam_noise = beamforming_noise_covariance(cfg.multipath.path_gain_variance, cfg.eps_a());
    return p;
}

inline std::uint64_t hash_observations(const CVector& r)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(r.data());
    const std::size_t n = static_cast<std::size_t>(r.size()) * sizeof(cplx);
    for (std::size_t i = 0; i < n; ++i)
    {
        h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
    return h;
}

struct RealizationResult
{
    std::vector<ResultRecord> records;
    std::vector<FailureRecord> failures;
    std::uint64_t observation_hash = 0;
};

/// Runs every configured estimator on one problem.
inline RealizationResult run_estimators(const ExperimentConfig& cfg, const SensingProblem& p,
                                        const std::shared_ptr<const LiftedOperator>& op, double snr_db, int bits,
                                        int trial)
{
    RealizationResult out;
    out.observation_hash = hash_observations(p.r);
    const RealSystem sys = make_real_system(p, op);
    const EmConfig em = cfg.resolved_em();

    for (const auto& name : cfg.estimators)
    {
        const auto start = std::chrono::steady_clock::now();
        try
        {
            CVector z_hat;
            int iterations = 0;
            double drop = 0.0;
            bool converged = true;
            if (name == "robust_em" || name == "conventional_em")
            {
                const EstimateTrace t = name == "robust_em" ? robust_em(sys, em) : conventional_em(sys, em);
                z_hat = t.z_hat;
                iterations = t.iterations;
                drop = max_objective_drop(t.objective);
                converged = t.converged;
            }
            else
            {
                z_hat = lmmse(sys, em.sigma_s_sq);
            }
            const double v = nmse_db(z_hat, *p.truth);
            if (!std::isfinite(v))
            {
                throw SolverError("non-finite NMSE");
            }
            ResultRecord rec;
            rec.snr_db = snr_db;
            rec.bits = bits;
            rec.estimator = name;
            rec.trial_index = trial;
            rec.nmse_db = v;
            rec.iterations = iterations;
            rec.objective_drop = drop;
            rec.converged = converged;
            if (cfg.record_wall_time)
            {
                rec.wall_time_ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            }
            out.records.push_back(rec);
        }
        catch (const std::exception& e)
        {
            out.failures.push_back({snr_db, bits, name, trial, e.what()});
        }
    }
    return out;
}

/// One realization: scenario of trial_index, noise of (snr_db, bits, trial_index).
inline RealizationResult run_realization(const ExperimentConfig& cfg, double snr_db, int bits, int trial_index)
{
    detail::require(trial_index >= 0 && trial_index < cfg.n_trials, "run_realization: trial index out of range");
    const Scenario s = build_scenario(cfg, trial_index);
    const SensingProblem p = simulate_cell(cfg, s, snr_db, bits, trial_index);
    return run_estimators(cfg, p, s.op, snr_db, bits, trial_index);
}

struct AggregateRow
{
    double snr_db = 0.0;
    int bits = 0;
    std::string estimator;
    double mean_mse_linear = 0.0; // mean of linear NMSE over successful trials
    double mean_nmse_db = 0.0;    // 10 log10(mean_mse_linear)
    double stderr_db = 0.0;       // delta-method standard error of mean_nmse_db
    int n = 0;
};

struct SweepResult
{
    std::vector<ResultRecord> records; // ordered by snr, bits, trial, estimator
    std::vector<FailureRecord> failures;
    std::vector<AggregateRow> aggregate;
    int cells = 0;
    int empty_cells = 0; // (snr, bits, estimator) cells with no successful trial
};

/// Mean of linear NMSE per (snr, bits, estimator), reported in grid order.
inline std::vector<AggregateRow> aggregate_records(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records)
{
    struct Acc
    {
        double sum = 0.0;
        double sum_sq = 0.0;
        int n = 0;
    };
    std::map<std::tuple<double, int, std::string>, Acc> acc;
    for (const auto& r : records)
    {
        auto& a = acc[{r.snr_db, r.bits, r.estimator}];
        const double v = std::pow(10.0, r.nmse_db / 10.0);
        a.sum += v;
        a.sum_sq += v * v;
        ++a.n;
    }

    std::vector<AggregateRow> rows;
    for (double snr : cfg.snr_grid_db)
    {
        for (int bits : cfg.bits_list)
        {
            for (const auto& name : cfg.estimators)
            {
                const auto it = acc.find({snr, bits, name});
                if (it == acc.end() || it->second.n == 0)
                {
                    continue;
                }
                const Acc& a = it->second;
                AggregateRow row;
                row.snr_db = snr;
                row.bits = bits;
                row.estimator = name;
                row.n = a.n;
                row.mean_mse_linear = a.sum / a.n;
                row.mean_nmse_db = 10.0 * std::log10(row.mean_mse_linear);
                if (a.n > 1)
                {
                    const double var = std::max(0.0, (a.sum_sq - a.sum * a.sum / a.n) / (a.n - 1));
                    row.stderr_db = 10.0 / std::log(10.0) * std::sqrt(var / a.n) / row.mean_mse_linear;
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

using ProgressFn = std::function<void(int done, int total)>;

/// Full sweep. One task per trial; each task builds its scenario once and
/// runs every (SNR, bits) cell on it. Results are placed by task index, so the
/// output does not depend on thread count or scheduling.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const ProgressFn& progress = nullptr)
{
    cfg.validate();
    const int n_snr = static_cast<int>(cfg.snr_grid_db.size());
    const int n_bits = static_cast<int>(cfg.bits_list.size());
    const int n_cells = n_snr * n_bits;

    // per trial, per (snr, bits) cell
    std::vector<std::vector<RealizationResult>> results(cfg.n_trials, std::vector<RealizationResult>(n_cells));

    auto run_trial = [&](int trial) {
        std::unique_ptr<Scenario> s;
        std::string scenario_error;
        try
        {
            s = std::make_unique<Scenario>(build_scenario(cfg, trial));
        }
        catch (const std::exception& e)
        {
            scenario_error = e.what();
        }
        for (int i = 0; i < n_snr; ++i)
        {
            for (int k = 0; k < n_bits; ++k)
            {
                const double snr = cfg.snr_grid_db[i];
                const int bits = cfg.bits_list[k];
                auto& slot = results[trial][i * n_bits + k];
                try
                {
                    if (!s)
                    {
                        throw SolverError("scenario generation failed: " + scenario_error);
                    }
                    const SensingProblem p = simulate_cell(cfg, *s, snr, bits, trial);
                    slot = run_estimators(cfg, p, s->op, snr, bits, trial);
                }
                catch (const std::exception& e)
                {
                    for (const auto& name : cfg.estimators)
                    {
                        slot.failures.push_back({snr, bits, name, trial, e.what()});
                    }
                }
            }
        }
    };

    const int n_threads = std::max(1, std::min(cfg.threads > 0 ? cfg.threads
                                                               : static_cast<int>(std::thread::hardware_concurrency()),
                                               cfg.n_trials));
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (int t = next++; t < cfg.n_trials; t = next++)
        {
            run_trial(t);
            const int d = ++done;
            if (progress)
            {
                std::lock_guard<std::mutex> lock(progress_mutex);
                progress(d, cfg.n_trials);
            }
        }
    };
    if (n_threads == 1)
    {
        worker();
    }
    else
    {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n_threads; ++i)
        {
            pool.emplace_back(worker);
        }
    }

    SweepResult out;
    for (int c = 0; c < n_cells; ++c)
    {
        for (int t = 0; t < cfg.n_trials; ++t)
        {
            auto& r = results[t][c];
            out.records.insert(out.records.end(), r.records.begin(), r.records.end());
            out.failures.insert(out.failures.end(), r.failures.begin(), r.failures.end());
        }
    }
    out.aggregate = aggregate_records(cfg, out.records);
    out.cells = n_cells * static_cast<int>(cfg.estimators.size());
    out.empty_cells = out.cells - static_cast<int>(out.aggregate.size());
    return out;
}

enum ExitCode : int
{
    exit_ok = 0,
    exit_config_error = 2,
    exit_partial_failure = 3,
    exit_total_failure = 4,
};

inline int sweep_exit_code(const SweepResult& r)
{
    if (r.records.empty())
    {
        return exit_total_failure;
    }
    return r.failures.empty() ? exit_ok : exit_partial_failure;
}

namespace detail
{

/// Shortest round-trip decimal form; locale independent.
inline std::string format_double(double x)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string format_fixed(double x, int digits)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, digits);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
    {
        return s;
    }
    std::string out = "\"";
    for (char c : s)
    {
        if (c == '"')
        {
            out += '"';
        }
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

} // namespace detail

inline void write_raw_csv(std::ostream& os, const std::vector<ResultRecord>& records)
{
    os << "snr_db,bits,estimator,trial_index,nmse_db,iterations,wall_time_ms\n";
    for (const auto& r : records)
    {
        os << detail::format_double(r.snr_db) << ',' << r.bits << ',' << r.estimator << ',' << r.trial_index << ','
           << detail::format_double(r.nmse_db) << ',' << r.iterations << ',' << detail::format_double(r.wall_time_ms)
           << '\n';
    }
}

inline void write_failures_csv(std::ostream& os, const std::vector<FailureRecord>& failures)
{
    os << "snr_db,bits,estimator,trial_index,message\n";
    for (const auto& f : failures)
    {
        os << detail::format_double(f.snr_db) << ',' << f.bits << ',' << f.estimator << ',' << f.trial_index << ','
           << detail::csv_escape(f.message) << '\n';
    }
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows)
{
    os << "# mean_mse_linear is the mean of per-trial linear NMSE on z; mean_nmse_db = 10*log10(mean_mse_linear)\n";
    os << "snr_db,bits,estimator,mean_mse_linear,mean_nmse_db,stderr_db,n\n";
    for (const auto& r : rows)
    {
        os << detail::format_double(r.snr_db) << ',' << r.bits << ',' << r.estimator << ','
           << detail::format_double(r.mean_mse_linear) << ',' << detail::format_double(r.mean_nmse_db) << ','
           << detail::format_double(r.stderr_db) << ',' << r.n << '\n';
    }
}

inline std::vector<AggregateRow> read_aggregate_csv(std::istream& in)
{
    std::vector<AggregateRow> rows;
    std::string line;
    std::vector<std::string> header;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string field;
        while (std::getline(ss, field, ','))
        {
            out.push_back(field);
        }
        return out;
    };
    int line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#')
        {
            continue;
        }
        const auto fields = split(line);
        if (header.empty())
        {
            header = fields;
            continue;
        }
        if (fields.size() != header.size())
        {
            throw std::runtime_error("aggregate csv line " + std::to_string(line_no) + ": wrong field count");
        }
        AggregateRow row;
        bool have_snr = false;
        bool have_bits = false;
        bool have_est = false;
        bool have_db = false;
        try
        {
            for (std::size_t i = 0; i < header.size(); ++i)
            {
                const auto& h = header[i];
                const auto& f = fields[i];
                if (h == "snr_db")
                {
                    row.snr_db = std::stod(f);
                    have_snr = true;
                }
                else if (h == "bits")
                {
                    row.bits = std::stoi(f);
                    have_bits = true;
                }
                else if (h == "estimator")
                {
                    row.estimator = f;
                    have_est = true;
                }
                else if (h == "mean_mse_linear")
                {
                    row.mean_mse_linear = std::stod(f);
                }
                else if (h == "mean_nmse_db")
                {
                    row.mean_nmse_db = std::stod(f);
                    have_db = true;
                }
                else if (h == "stderr_db")
                {
                    row.stderr_db = std::stod(f);
                }
                else if (h == "n")
                {
                    row.n = std::stoi(f);
                }
            }
        }
        catch (const std::logic_error&)
        {
            throw std::runtime_error("aggregate csv line " + std::to_string(line_no) + ": unparsable number");
        }
        if (!(have_snr && have_bits && have_est && have_db))
        {
            throw std::runtime_error("aggregate csv is missing required columns");
        }
        rows.push_back(row);
    }
    return rows;
}

/// SVG line plot of mean NMSE versus SNR for one bit depth, one polyline per
/// estimator. Output depends only on the rows and caption.
inline std::string emit_plot(const std::vector<AggregateRow>& rows, int bits, const std::string& caption)
{
    std::vector<std::string> names;
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (const auto& r : rows)
    {
        if (r.bits != bits)
        {
            continue;
        }
        if (!series.count(r.estimator))
        {
            names.push_back(r.estimator);
        }
        series[r.estimator].emplace_back(r.snr_db, r.mean_nmse_db);
    }
    if (names.empty())
    {
        throw std::invalid_argument("emit_plot: no rows for " + std::to_string(bits) + "-bit");
    }

    double x_min = 1e300;
    double x_max = -1e300;
    double y_min = 1e300;
    double y_max = -1e300;
    for (auto& [name, pts] : series)
    {
        std::sort(pts.begin(), pts.end());
        for (const auto& [x, y] : pts)
        {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_max == x_min)
    {
        x_min -= 1.0;
        x_max += 1.0;
    }
    double y_step = 1.0;
    for (double s : {1.0, 2.0, 5.0, 10.0, 20.0})
    {
        y_step = s;
        if ((y_max - y_min) / s <= 10.0)
        {
            break;
        }
    }
    y_min = std::floor(y_min / y_step) * y_step;
    y_max = std::ceil(y_max / y_step) * y_step;
    if (y_max == y_min)
    {
        y_max += y_step;
    }

    const double width = 680;
    const double height = 440;
    const double left = 70;
    const double right = 180;
    const double top = 40;
    const double bottom = 70;
    const double pw = width - left - right;
    const double ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * pw; };
    auto py = [&](double y) { return top + (y_max - y) / (y_max - y_min) * ph; };
    auto f = [](double v) { return detail::format_fixed(v, 2); };

    static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(width) << "\" height=\"" << f(height)
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << f(width) << "\" height=\"" << f(height) << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << f(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">NMSE versus SNR, "
        << bits << "-bit ADC</text>\n";

    for (double y = y_min; y <= y_max + 1e-9; y += y_step)
    {
        svg << "<line x1=\"" << f(left) << "\" y1=\"" << f(py(y)) << "\" x2=\"" << f(left + pw) << "\" y2=\""
            << f(py(y)) << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << f(left - 6) << "\" y=\"" << f(py(y) + 4) << "\" text-anchor=\"end\">"
            << detail::format_double(y) << "</text>\n";
    }
    std::set<double> xs;
    for (const auto& [name, pts] : series)
    {
        for (const auto& p : pts)
        {
            xs.insert(p.first);
        }
    }
    for (double x : xs)
    {
        svg << "<line x1=\"" << f(px(x)) << "\" y1=\"" << f(top) << "\" x2=\"" << f(px(x)) << "\" y2=\""
            << f(top + ph) << "\" stroke=\"#eeeeee\"/>\n";
        svg << "<text x=\"" << f(px(x)) << "\" y=\"" << f(top + ph + 16) << "\" text-anchor=\"middle\">"
            << detail::format_double(x) << "</text>\n";
    }
    svg << "<rect x=\"" << f(left) << "\" y=\"" << f(top) << "\" width=\"" << f(pw) << "\" height=\"" << f(ph)
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << f(left + pw / 2) << "\" y=\"" << f(top + ph + 36) << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
    svg << "<text x=\"18\" y=\"" << f(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << f(top + ph / 2) << ")\">NMSE (dB)</text>\n";

    for (std::size_t i = 0; i < names.size(); ++i)
    {
        const char* color = colors[i % (sizeof(colors) / sizeof(colors[0]))];
        const auto& pts = series[names[i]];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < pts.size(); ++k)
        {
            svg << (k ? " " : "") << f(px(pts[k].first)) << ',' << f(py(pts[k].second));
        }
        svg << "\"/>\n";
        for (const auto& [x, y] : pts)
        {
            svg << "<circle cx=\"" << f(px(x)) << "\" cy=\"" << f(py(y)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        const double ly = top + 16 + 20 * static_cast<double>(i);
        svg << "<line x1=\"" << f(left + pw + 14) << "\" y1=\"" << f(ly) << "\" x2=\"" << f(left + pw + 38)
            << "\" y2=\"" << f(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << f(left + pw + 44) << "\" y=\"" << f(ly + 4) << "\">" << names[i] << "</text>\n";
    }
    svg << "<text x=\"" << f(left) << "\" y=\"" << f(height - 12) << "\" font-size=\"11\">" << caption << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

inline std::string plot_caption(const ExperimentConfig& cfg)
{
    std::ostringstream os;
    os << "T=" << cfg.t_slots << ", N_R=" << cfg.n_r << ", L=" << cfg.l_rf
       << ", sigma_d^2=" << detail::format_double(cfg.sigma_d_sq) << ", rho=" << detail::format_double(cfg.rho)
       << ", trials=" << cfg.n_trials << ", seed=" << cfg.seed;
    return os.str();
}

/// Writes raw.csv, aggregate.csv, failures.csv (if any) and one fig_<b>bit.svg
/// per bit depth with data into dir.
inline void write_sweep_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SweepResult& r)
{
    std::filesystem::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os)
        {
            throw std::runtime_error("cannot write " + (dir / name).string());
        }
        return os;
    };
    {
        auto os = open("raw.csv");
        write_raw_csv(os, r.records);
    }
    {
        auto os = open("aggregate.csv");
        write_aggregate_csv(os, r.aggregate);
    }
    std::filesystem::remove(dir / "failures.csv");
    if (!r.failures.empty())
    {
        auto os = open("failures.csv");
        write_failures_csv(os, r.failures);
    }
    for (int bits : cfg.bits_list)
    {
        const bool has = std::any_of(r.aggregate.begin(), r.aggregate.end(), [&](const auto& a) { return a.bits == bits; });
        if (has)
        {
            auto os = open("fig_" + std::to_string(bits) + "bit.svg");
            os << emit_plot(r.aggregate, bits, plot_caption(cfg));
        }
    }
}

} // namespace lensem

#endif // LENSEM_EXPERIMENTS_HPP
