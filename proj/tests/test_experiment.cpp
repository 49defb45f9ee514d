#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "jbsde/experiment.hpp"

using namespace jbsde;

namespace {

const std::filesystem::path kConfigDir =
    std::filesystem::path(__FILE__).parent_path().parent_path() / "configs";

std::filesystem::path fresh_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("jbsde_exp_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig small(const std::string& file) {
    ExperimentConfig cfg = load_config(kConfigDir / file);
    cfg.paths.n_paths = std::min<std::size_t>(cfg.paths.n_paths, 4000);
    cfg.lattice.n_x = std::min<std::size_t>(cfg.lattice.n_x, 200);
    return cfg;
}

}  // namespace

TEST_CASE("simulate experiment passes its checks and writes artifacts") {
    const auto dir = fresh_dir("simulate");
    ExperimentConfig cfg = small("simulate.json");
    const RunResult res = run_experiment(cfg, dir);
    CHECK(res.exit_code == kExitOk);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value);
        CHECK(c.pass);
    }
    CHECK(std::filesystem::exists(dir / "reference_summary.csv"));
    CHECK(std::filesystem::exists(dir / "controlled_summary_piecewise.csv"));
    CHECK(std::filesystem::exists(dir / "reference_bundle.bin"));
    CHECK(std::filesystem::exists(dir / "run_summary.json"));

    const std::string header = slurp(dir / "reference_summary.csv").substr(0, 14);
    CHECK(header == "# config_hash=");
}

TEST_CASE("solve-bsdej experiment") {
    const auto dir = fresh_dir("bsdej");
    // run at the config's own path count: the u-coupled driver needs the
    // sample for its lattice cross-check
    ExperimentConfig cfg = load_config(kConfigDir / "solve_bsdej_jumps.json");
    const RunResult res = run_experiment(cfg, dir);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value << " tol " << c.tolerance << " " << c.detail);
        CHECK(c.pass);
    }
    CHECK(res.exit_code == kExitOk);
    CHECK(std::filesystem::exists(dir / "bsdej_fields.csv"));
    CHECK(std::isfinite(res.headline_value));
}

TEST_CASE("solve-2bsdej experiment: convex payoff under volatility uncertainty") {
    const auto dir = fresh_dir("2bsdej");
    ExperimentConfig cfg = small("solve_2bsdej_uncertain_vol.json");
    cfg.paths.n_paths = 20000;
    const RunResult res = run_experiment(cfg, dir);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value << " tol " << c.tolerance << " " << c.detail);
        CHECK(c.pass);
    }
    CHECK(res.exit_code == kExitOk);
    CHECK(std::abs(res.headline_value - 1.5) <= 2e-2);  // a2 T for terminal x^2
    CHECK(std::filesystem::exists(dir / "representation.csv"));
    CHECK(std::filesystem::exists(dir / "k_report.csv"));
    CHECK(std::filesystem::exists(dir / "norm_report.csv"));
}

TEST_CASE("singleton family reduces to the classical solution") {
    const auto dir = fresh_dir("singleton");
    ExperimentConfig cfg = small("singleton_reduction.json");
    const RunResult res = run_experiment(cfg, dir);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value << " tol " << c.tolerance);
        CHECK(c.pass);
    }
    CHECK(res.exit_code == kExitOk);
}

TEST_CASE("check-k experiment on the G-Poisson family") {
    const auto dir = fresh_dir("checkk");
    ExperimentConfig cfg = small("check_k_gpoisson.json");
    const RunResult res = run_experiment(cfg, dir);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value << " tol " << c.tolerance);
        CHECK(c.pass);
    }
    CHECK(res.exit_code == kExitOk);
}

TEST_CASE("compare-representation: butterfly payoff rewards adaptivity") {
    const auto dir = fresh_dir("compare");
    ExperimentConfig cfg = load_config(kConfigDir / "compare_representation_butterfly.json");
    const RunResult res = run_experiment(cfg, dir);
    CHECK(res.exit_code == kExitOk);
    CHECK(res.summary["max_gap"].get<double>() > 3e-2);
}

TEST_CASE("appendix-checks experiment") {
    const auto dir = fresh_dir("appendix");
    ExperimentConfig cfg = load_config(kConfigDir / "appendix.json");
    cfg.paths.n_paths = 50000;
    const RunResult res = run_experiment(cfg, dir);
    for (const auto& c : res.checks) {
        INFO(c.name << " value " << c.value << " tol " << c.tolerance);
        CHECK(c.pass);
    }
    CHECK(std::filesystem::exists(dir / "inequality_constants.csv"));
    CHECK(std::filesystem::exists(dir / "negative_moments.csv"));
}

TEST_CASE("convergence driver") {
    const auto dir = fresh_dir("conv");
    ExperimentConfig cfg = load_config(kConfigDir / "convergence_heat.json");
    const RunResult res = run_convergence(cfg, dir);
    CHECK(res.exit_code == kExitOk);
    CHECK(std::filesystem::exists(dir / "convergence.csv"));
    CHECK(std::filesystem::exists(dir / "convergence_errors.csv"));
    // headline value approaches the compensated second moment (1 + 1.5) T
    CHECK(std::abs(res.headline_value - 2.5) <= 2e-2);

    SECTION("levels < 2 are rejected") {
        cfg.convergence_levels = 1;
        CHECK_THROWS_AS(run_convergence(cfg, dir), ConfigError);
    }
}

TEST_CASE("reruns are byte-identical for any worker count") {
    ExperimentConfig cfg = small("simulate.json");
    cfg.paths.n_paths = 2000;
    const auto d1 = fresh_dir("det1");
    const auto d2 = fresh_dir("det2");
    cfg.workers = 1;
    run_experiment(cfg, d1);
    cfg.workers = 2;
    run_experiment(cfg, d2);
    for (const auto& f : {"reference_summary.csv", "controlled_summary_piecewise.csv",
                          "run_summary.json"})
        CHECK(slurp(d1 / f) == slurp(d2 / f));

    SECTION("a different seed changes the artifacts") {
        const auto d3 = fresh_dir("det3");
        cfg.seed += 1;
        run_experiment(cfg, d3);
        CHECK(slurp(d1 / "reference_summary.csv") != slurp(d3 / "reference_summary.csv"));
    }
}
