#include "promptfed/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <string>

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    long long seed = -1;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Path to a key = value config file");
    cmd->add_option("--out", args.out_dir, "Output directory root");
    cmd->add_option("--seed", args.seed, "Override the master seed");
    cmd->add_option("--workers", args.workers, "Worker threads for client updates");
}

promptfed::ExperimentConfig resolve(const CommonArgs& args) {
    promptfed::ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = promptfed::load_config(args.config_path);
    if (args.seed >= 0) cfg.train.master_seed = static_cast<std::uint64_t>(args.seed);
    // PROMPTFED_SEED takes precedence over both the config file and --seed.
    if (const char* env = std::getenv("PROMPTFED_SEED")) {
        try {
            cfg.train.master_seed = std::stoull(env);
        } catch (const std::exception&) {
            throw promptfed::ConfigError("PROMPTFED_SEED is not an integer: " +
                                         std::string(env));
        }
    }
    if (args.workers > 0) cfg.train.workers = args.workers;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated prompt-learning simulator"};
    app.require_subcommand(1);

    CommonArgs run_args, ablate_args, conv_args, sweep_args, checks_args;
    bool inject_fault = false;

    CLI::App* run_cmd = app.add_subcommand("run", "Train on one config and emit artifacts");
    add_common(run_cmd, run_args);
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Four-variant component ablation");
    add_common(ablate_cmd, ablate_args);
    CLI::App* conv_cmd =
        app.add_subcommand("convergence", "Gradient-norm trajectories at beta, beta/2, beta/4");
    add_common(conv_cmd, conv_args);
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep-lengths", "Fixed vs uniform{4..64} local prompt lengths");
    add_common(sweep_cmd, sweep_args);
    CLI::App* checks_cmd = app.add_subcommand("checks", "Run the property suites");
    add_common(checks_cmd, checks_args);
    checks_cmd->add_flag("--inject-fault", inject_fault,
                         "Break projector symmetry on purpose (negative control)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            promptfed::ExperimentConfig cfg = resolve(run_args);
            promptfed::RunSummary s = promptfed::run_experiment(cfg, run_args.out_dir);
            std::printf("rounds=%d last10_mean_accuracy=%.6f last10_std_accuracy=%.6f\n",
                        s.rounds, s.mean_accuracy, s.std_accuracy);
            std::printf("artifacts: %s\n", s.out_dir.c_str());
        } else if (ablate_cmd->parsed()) {
            promptfed::ExperimentConfig cfg = resolve(ablate_args);
            cfg.run_name += "-ablate";
            auto rows = promptfed::run_ablation(cfg, ablate_args.out_dir);
            for (std::size_t i = 0; i < rows.size(); ++i)
                std::printf("%zu. %-12s %.6f\n", i + 1, rows[i].name.c_str(),
                            rows[i].mean_accuracy);
        } else if (conv_cmd->parsed()) {
            promptfed::ExperimentConfig cfg = resolve(conv_args);
            cfg.run_name += "-convergence";
            auto res = promptfed::run_convergence(cfg, conv_args.out_dir);
            for (const auto& t : res.trajectories)
                std::printf("beta=%.6g head=%.6g tail=%.6g %s\n", t.beta, t.head_mean,
                            t.tail_mean,
                            t.noop ? "no-op"
                                   : (t.diverged ? "diverged"
                                                 : (t.tail_ok ? "converged" : "plateau-high")));
            std::printf("tail_criterion=%s plateau_non_increasing=%s\n",
                        res.tail_ok_all ? "pass" : "fail",
                        res.plateau_monotone ? "pass" : "fail");
        } else if (sweep_cmd->parsed()) {
            promptfed::ExperimentConfig cfg = resolve(sweep_args);
            cfg.run_name += "-lengths";
            auto res = promptfed::run_length_sweep(cfg, sweep_args.out_dir);
            std::printf("fixed=%.6f uniform_random=%.6f\n", res.fixed_accuracy,
                        res.random_accuracy);
        } else if (checks_cmd->parsed()) {
            promptfed::CheckReport report = promptfed::run_checks(inject_fault);
            std::fputs(report.text.c_str(), stdout);
            return report.passed ? 0 : 1;
        }
    } catch (const promptfed::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
