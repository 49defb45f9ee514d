// Batch experiment runner: loads a JSON experiment config, executes the named
// experiment and writes CSV artifacts plus a run summary. Exit codes: 0 all
// checks pass, 2 config error, 3 at least one check failed.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "jbsde/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    int workers = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--out", opts.out_dir, "output directory (default: config out_dir)");
    cmd->add_option("--workers", opts.workers, "worker cap; results do not depend on it");
}

int run(const std::string& experiment, const CommonOpts& opts) {
    try {
        jbsde::ExperimentConfig cfg = jbsde::load_config(opts.config_path);
        cfg.experiment = experiment == "convergence" ? cfg.experiment : experiment;
        if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
        if (opts.workers >= 0) cfg.workers = opts.workers;
        const std::filesystem::path out =
            opts.out_dir.empty() ? std::filesystem::path{} : std::filesystem::path(opts.out_dir);

        const jbsde::RunResult res = experiment == "convergence"
                                         ? jbsde::run_convergence(cfg, out)
                                         : jbsde::run_experiment(cfg, out);
        for (const auto& c : res.checks)
            std::printf("[%s] %s value=%s tol=%s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                        jbsde::format_double(c.value).c_str(),
                        jbsde::format_double(c.tolerance).c_str(), c.detail.c_str());
        if (!std::isnan(res.headline_value))
            std::printf("headline_value %s\n", jbsde::format_double(res.headline_value).c_str());
        return res.exit_code;
    } catch (const jbsde::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return jbsde::kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return jbsde::kExitCheckFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for backward SDEs with jumps under model uncertainty"};
    app.require_subcommand(1);

    const std::vector<std::string> experiments = {
        "simulate",  "solve-bsdej", "solve-2bsdej",    "solve-pide",
        "compare-representation", "check-k",     "appendix-checks", "convergence"};

    std::vector<CommonOpts> opts(experiments.size());
    std::vector<CLI::App*> cmds;
    for (std::size_t i = 0; i < experiments.size(); ++i) {
        CLI::App* cmd = app.add_subcommand(experiments[i]);
        add_common(cmd, opts[i]);
        cmds.push_back(cmd);
    }

    CLI11_PARSE(app, argc, argv);

    for (std::size_t i = 0; i < experiments.size(); ++i)
        if (cmds[i]->parsed()) return run(experiments[i], opts[i]);
    return jbsde::kExitConfigError;
}
