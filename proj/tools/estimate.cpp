// estimate: command-line front end for sweeps, single-realization demos and
// re-plotting aggregate tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lensem/lensem.hpp"

namespace fs = std::filesystem;
using namespace lensem;

namespace
{

struct Overrides
{
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<std::string> out_dir;
    std::optional<int> threads;
};

void add_overrides(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--trials", o.trials, "Monte Carlo trials");
    cmd->add_option("--out-dir", o.out_dir, "output directory");
    cmd->add_option("--threads", o.threads, "worker threads (0: all cores)");
}

ExperimentConfig resolve_config(const std::string& path, const Overrides& o)
{
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
    if (o.seed)
    {
        cfg.seed = *o.seed;
    }
    if (o.trials)
    {
        cfg.n_trials = *o.trials;
    }
    if (o.out_dir)
    {
        cfg.output_dir = *o.out_dir;
    }
    if (o.threads)
    {
        cfg.threads = *o.threads;
    }
    cfg.validate();
    return cfg;
}

std::ofstream open_out(const fs::path& p)
{
    std::ofstream os(p, std::ios::binary);
    if (!os)
    {
        throw std::runtime_error("cannot write " + p.string());
    }
    return os;
}

int run_sweep_cmd(const std::string& config_path, const Overrides& o, bool quiet)
{
    const ExperimentConfig cfg = resolve_config(config_path, o);
    const auto progress = [quiet](int done, int total) {
        if (!quiet)
        {
            std::fprintf(stderr, "\rtrials %d/%d", done, total);
            if (done == total)
            {
                std::fprintf(stderr, "\n");
            }
        }
    };
    const SweepResult r = run_sweep(cfg, progress);
    write_sweep_outputs(cfg.output_dir, cfg, r);

    std::printf("%-8s %-5s %-16s %12s %10s %5s\n", "snr_db", "bits", "estimator", "nmse_db", "stderr_db", "n");
    for (const auto& a : r.aggregate)
    {
        std::printf("%-8g %-5d %-16s %12.3f %10.3f %5d\n", a.snr_db, a.bits, a.estimator.c_str(), a.mean_nmse_db,
                    a.stderr_db, a.n);
    }
    std::printf("%zu records, %zu failures, %d/%d cells empty -> %s\n", r.records.size(), r.failures.size(),
                r.empty_cells, r.cells, cfg.output_dir.c_str());
    return sweep_exit_code(r);
}

int run_demo_cmd(const std::string& config_path, const Overrides& o, int bits, double snr_db, int trial)
{
    ExperimentConfig cfg = resolve_config(config_path, o);
    if (trial < 0 || trial >= cfg.n_trials)
    {
        throw ConfigError("--trial must be in [0, n_trials)");
    }
    if (bits < 1 || bits > max_quantizer_bits)
    {
        throw ConfigError("--bits must be in [1, 16]");
    }
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);

    const Scenario s = build_scenario(cfg, trial);
    const SensingProblem p = simulate_cell(cfg, s, snr_db, bits, trial);
    const RealSystem sys = make_real_system(p, s.op);
    const EmConfig em = cfg.resolved_em();

    {
        auto os = open_out(dir / "channel.csv");
        write_channel_csv(os, s.channel);
    }
    {
        auto os = open_out(dir / "beamformer.csv");
        write_matrix_csv(os, s.beamformer.f_eff);
    }
    {
        auto os = open_out(dir / "observations.csv");
        write_observations_csv(os, p);
    }
    {
        auto os = open_out(dir / "psi.csv");
        write_psi_csv(os, p.psi);
    }

    nlohmann::json meta;
    meta["config"] = config_to_json(cfg);
    meta["snr_db"] = snr_db;
    meta["bits"] = bits;
    meta["trial"] = trial;
    meta["t_slots"] = p.t_slots;
    meta["l_rf"] = p.l_rf;
    meta["n_r"] = p.n_r;
    meta["n_t"] = p.n_t;
    meta["rho"] = p.rho;
    meta["sigma_n_sq"] = p.sigma_n_sq;
    meta["sigma_d_sq_observed"] = p.sigma_d_sq;
    meta["quantizer"] = {{"bits", p.quantizer.bits},
                         {"gamma", p.quantizer.gamma},
                         {"delta", p.quantizer.delta},
                         {"power", p.quantizer.power}};
    meta["psi_layout"] = "rows slot-major (row = slot * l_rf + rf), columns re/im interleaved";

    std::printf("trial %d, %d-bit, SNR %g dB: sigma_n^2 = %.4g, delta = %.4g\n", trial, bits, snr_db, p.sigma_n_sq,
                p.quantizer.delta);
    for (const auto& name : cfg.estimators)
    {
        double v = 0.0;
        int iters = 0;
        if (name == "lmmse")
        {
            v = nmse_db(lmmse(sys, em.sigma_s_sq), *p.truth);
        }
        else
        {
            const EstimateTrace t = name == "robust_em" ? robust_em(sys, em) : conventional_em(sys, em);
            v = nmse_db(t.z_hat, *p.truth);
            iters = t.iterations;
            auto os = open_out(dir / ("trace_" + name + ".csv"));
            write_trace_csv(os, t);
            meta["estimates"][name] = {{"iterations", t.iterations},
                                       {"converged", t.converged},
                                       {"degenerate_bins", t.degenerate_bins},
                                       {"ill_conditioned", t.ill_conditioned}};
        }
        meta["estimates"][name]["nmse_db"] = v;
        std::printf("  %-16s NMSE %8.3f dB  iterations %d\n", name.c_str(), v, iters);
    }
    auto os = open_out(dir / "problem.json");
    os << meta.dump(2) << '\n';
    std::printf("dump written to %s\n", dir.string().c_str());
    return exit_ok;
}

int run_plot_cmd(const std::string& from, int bits, const std::string& out)
{
    std::ifstream in(from);
    if (!in)
    {
        throw ConfigError("cannot open " + from);
    }
    const auto rows = read_aggregate_csv(in);
    const fs::path target = out.empty() ? fs::path(from).parent_path() / ("fig_" + std::to_string(bits) + "bit.svg")
                                        : fs::path(out);
    const std::string svg = emit_plot(rows, bits, "from " + fs::path(from).filename().string());
    auto os = open_out(target);
    os << svg;
    std::printf("%s\n", target.string().c_str());
    return exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Channel estimation from low-resolution quantized observations of a lens-based hybrid receiver"};
    app.require_subcommand(1);

    Overrides sweep_o;
    std::string sweep_config;
    bool quiet = false;
    auto* sweep = app.add_subcommand("sweep", "run a Monte Carlo SNR x bits sweep");
    sweep->add_option("--config", sweep_config, "JSON config file")->required()->check(CLI::ExistingFile);
    sweep->add_flag("--quiet", quiet, "no progress output");
    add_overrides(sweep, sweep_o);

    Overrides demo_o;
    std::string demo_config;
    int demo_bits = 3;
    double demo_snr = 5.0;
    int demo_trial = 0;
    auto* demo = app.add_subcommand("demo", "single realization with trace and problem dump");
    demo->add_option("--config", demo_config, "JSON config file (default: built-in full setup)")
        ->check(CLI::ExistingFile);
    demo->add_option("--bits", demo_bits, "ADC resolution");
    demo->add_option("--snr", demo_snr, "SNR in dB");
    demo->add_option("--trial", demo_trial, "trial index selecting the scenario");
    add_overrides(demo, demo_o);

    std::string plot_from;
    std::string plot_out;
    int plot_bits = 3;
    auto* plot = app.add_subcommand("plot", "render an SVG from an aggregate.csv");
    plot->add_option("--from", plot_from, "aggregate CSV")->required();
    plot->add_option("--bits", plot_bits, "ADC resolution to plot")->required();
    plot->add_option("--out", plot_out, "output SVG (default: next to the CSV)");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config_error;
    }

    try
    {
        if (*sweep)
        {
            return run_sweep_cmd(sweep_config, sweep_o, quiet);
        }
        if (*demo)
        {
            return run_demo_cmd(demo_config, demo_o, demo_bits, demo_snr, demo_trial);
        }
        return run_plot_cmd(plot_from, plot_bits, plot_out);
    }
    catch (const ConfigError& e)
    {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_config_error;
    }
    catch (const std::invalid_argument& e)
    {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return exit_config_error;
    }
    catch (const std::exception& e)
    {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_total_failure;
    }
}
