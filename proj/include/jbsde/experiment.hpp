#ifndef JBSDE_EXPERIMENT_HPP
#define JBSDE_EXPERIMENT_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/bsdej.hpp"
#include "jbsde/config.hpp"
#include "jbsde/io.hpp"
#include "jbsde/martingale.hpp"
#include "jbsde/solver2.hpp"

namespace jbsde {

// Exit-code contract: 0 all checks pass, 2 config error, 3 check failure.
enum ExitCode : int { kExitOk = 0, kExitConfigError = 2, kExitCheckFailure = 3 };

struct CheckResult {
    std::string name;
    bool pass = true;
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

struct RunResult {
    int exit_code = kExitOk;
    std::vector<CheckResult> checks;
    std::vector<std::string> outputs;  // files written, relative to out_dir
    nlohmann::ordered_json summary;
    double headline_value = std::numeric_limits<double>::quiet_NaN();  // e.g. Y(0, x0)
};

namespace exp_detail {

class Runner {
  public:
    Runner(const ExperimentConfig& cfg, const std::filesystem::path& out_dir)
        : cfg_(cfg), out_(out_dir), hash_(config_hash(cfg)) {
        std::filesystem::create_directories(out_);
    }

    void check(const std::string& name, bool pass, double value, double tol,
               std::string detail = {}) {
        result_.checks.push_back({name, pass, value, tol, std::move(detail)});
    }

    // |value - target| <= tol
    void check_abs(const std::string& name, double value, double target, double tol) {
        check(name, std::abs(value - target) <= tol, value, tol,
              "target " + format_double(target));
    }

    CsvWriter csv(const std::string& filename, const std::vector<std::string>& columns) {
        result_.outputs.push_back(filename);
        return CsvWriter(out_ / filename, columns, hash_, cfg_.seed);
    }

    const std::filesystem::path& out_dir() const { return out_; }
    std::uint64_t hash() const { return hash_; }

    RunResult finish(const std::string& experiment) {
        nlohmann::ordered_json checks = nlohmann::ordered_json::array();
        bool all_pass = true;
        for (const auto& c : result_.checks) {
            checks.push_back({{"name", c.name},
                              {"pass", c.pass},
                              {"value", c.value},
                              {"tolerance", c.tolerance},
                              {"detail", c.detail}});
            all_pass = all_pass && c.pass;
        }
        result_.summary["experiment"] = experiment;
        result_.summary["config_hash"] = hex64(hash_);
        result_.summary["seed"] = cfg_.seed;
        if (!std::isnan(result_.headline_value))
            result_.summary["headline_value"] = result_.headline_value;
        result_.summary["checks"] = checks;
        result_.summary["outputs"] = result_.outputs;
        result_.summary["pass"] = all_pass;
        {
            std::ofstream js(out_ / "run_summary.json", std::ios::binary);
            js << result_.summary.dump(2) << "\n";
            result_.outputs.push_back("run_summary.json");
        }
        result_.exit_code = all_pass ? kExitOk : kExitCheckFailure;
        return std::move(result_);
    }

    RunResult result_;
    const ExperimentConfig& cfg_;

  private:
    std::filesystem::path out_;
    std::uint64_t hash_;
};

inline const LevyBaseMeasure& base_measure(const ExperimentConfig& cfg) {
    if (cfg.base_measure.empty()) throw ConfigError("base_measure is required");
    return cfg.measure(cfg.base_measure);
}

inline std::vector<ControlSpec> family(const ExperimentConfig& cfg) {
    std::vector<ControlSpec> out;
    for (const auto& name : cfg.control_family) out.push_back(cfg.control(name));
    if (out.empty()) throw ConfigError("control_family is empty");
    return out;
}

inline ControlSpec constant_control(double a, double horizon, std::string name) {
    return ControlSpec::constant(a, JumpMapCell::identity(), horizon, std::move(name));
}

// --- simulate ---------------------------------------------------------------

inline RunResult run_simulate(const ExperimentConfig& cfg, Runner& r) {
    const LevyBaseMeasure& F = base_measure(cfg);
    const auto grid = uniform_grid(cfg.horizon, cfg.paths.n_steps);
    const PathBundle ref = simulate_reference(F, cfg.paths.n_paths, grid, cfg.seed, cfg.workers);

    write_summary_csv(r.out_dir() / "reference_summary.csv", ref, r.hash());
    r.result_.outputs.push_back("reference_summary.csv");
    write_bundle(ref, r.out_dir() / "reference_bundle");
    r.result_.outputs.push_back("reference_bundle.bin");
    r.result_.outputs.push_back("reference_bundle.json");

    // martingale property at every grid point
    double worst_ratio = 0.0;
    for (std::size_t k = 1; k <= ref.n_steps(); ++k) {
        std::vector<double> vals(ref.n_paths);
        for (std::size_t p = 0; p < ref.n_paths; ++p) vals[p] = ref.value(p, k);
        const SampleStats s = sample_stats(vals);
        if (s.se > 0.0) worst_ratio = std::max(worst_ratio, std::abs(s.mean) / s.se);
    }
    r.check("martingale_mean_within_3se", worst_ratio <= 3.0, worst_ratio, 3.0);

    for (const auto& name : cfg.control_family) {
        const ControlSpec& c = cfg.control(name);
        const ValidationReport v = validate_control(c, F);
        r.check("validate_control[" + name + "]", v.pass, v.pass ? 1.0 : 0.0, 1.0, v.detail);
        if (!v.pass) continue;

        const PathBundle ctl = apply_control(ref, c, F, cfg.workers);
        write_summary_csv(r.out_dir() / ("controlled_summary_" + name + ".csv"), ctl, r.hash());
        r.result_.outputs.push_back("controlled_summary_" + name + ".csv");

        const auto resid = second_moment_residuals(ctl);
        const SampleStats s = sample_stats(resid);
        r.check("second_moment_identity[" + name + "]",
                std::abs(s.mean) <= 3.0 * s.se + 1e-12, s.mean, 3.0 * s.se);

        const PathBundle back = reconstruct_reference(ctl, c, F, cfg.workers);
        double max_err = 0.0;
        for (std::size_t p = 0; p < ref.n_paths; ++p)
            for (std::size_t k = 0; k <= ref.n_steps(); ++k)
                max_err = std::max(max_err, std::abs(back.value(p, k) - ref.value(p, k)));
        const double tol = 1e-9 * static_cast<double>(ref.n_steps());
        r.check("reference_round_trip[" + name + "]", max_err <= tol, max_err, tol);

        // allowance for the predictable discretization bias of the bracket
        // estimator: the net increment squares to a dt + (mean rate)^2 dt^2
        double bias = 0.0;
        for (std::size_t k = 0; k < ctl.n_steps(); ++k) {
            std::vector<double> rel(ctl.n_paths);
            for (std::size_t p = 0; p < ctl.n_paths; ++p) {
                const double m = ctl.compensator(p, k).mean_rate();
                rel[p] = m * m * ctl.dt(k) / ctl.qv(p, k);
            }
            bias += pairwise_sum(rel) / static_cast<double>(ctl.n_paths);
        }
        bias /= static_cast<double>(ctl.n_steps());
        const QvEstimate qv = estimate_qv_density(ctl, cfg.qv_window);
        r.check("qv_ensemble_rel_error[" + name + "]",
                qv.ensemble_rel_error <= 0.10 + bias, qv.ensemble_rel_error, 0.10 + bias);
    }

    if (!cfg.lr_against.empty()) {
        const auto d = likelihood_ratio(ref, F, cfg.measure(cfg.lr_against));
        const SampleStats s = sample_stats(d);
        r.check("likelihood_ratio_mean", std::abs(s.mean - 1.0) <= 3.0 * s.se, s.mean, 3.0 * s.se);
    }
    return r.finish("simulate");
}

// --- solve-bsdej ------------------------------------------------------------

inline RunResult run_solve_bsdej(const ExperimentConfig& cfg, Runner& r) {
    const LevyBaseMeasure& F = base_measure(cfg);
    const GeneratorSpec g = make_generator(cfg);
    const TerminalFn terminal = make_terminal(cfg.payoff);
    const auto grid = uniform_grid(cfg.horizon, cfg.paths.n_steps);

    const std::vector<ControlSpec> fam = family(cfg);
    const ControlSpec& c = fam.front();
    const ValidationReport v = validate_control(c, F);
    if (!v.pass) throw ConfigError("control '" + c.name() + "' rejected: " + v.detail);

    const PathBundle ref = simulate_reference(F, cfg.paths.n_paths, grid, cfg.seed, cfg.workers);
    const PathBundle ctl = apply_control(ref, c, F, cfg.workers);
    const BsdejSolution sol =
        solve_regression(ctl, g, terminal_payoff(terminal), cfg.mc_basis_degree);
    r.result_.headline_value = sol.Y0;

    {
        std::vector<std::string> cols{"t", "Y_mean", "Y_se", "Z_mean"};
        for (std::size_t a = 0; a < sol.n_atoms; ++a)
            cols.push_back("U_mean_atom" + std::to_string(a));
        auto csv = r.csv("bsdej_fields.csv", cols);
        for (std::size_t k = 0; k <= sol.n_steps; ++k) {
            std::vector<double> ys(sol.n_paths);
            for (std::size_t p = 0; p < sol.n_paths; ++p) ys[p] = sol.y(p, k);
            const SampleStats s = sample_stats(ys);
            std::vector<double> row{ctl.grid[k], s.mean, s.se, 0.0};
            if (k < sol.n_steps) {
                std::vector<double> zs(sol.n_paths);
                for (std::size_t p = 0; p < sol.n_paths; ++p) zs[p] = sol.z(p, k);
                row[3] = sample_stats(zs).mean;
                for (std::size_t a = 0; a < sol.n_atoms; ++a) {
                    std::vector<double> us(sol.n_paths);
                    for (std::size_t p = 0; p < sol.n_paths; ++p) us[p] = sol.u_at(p, k, a);
                    row.push_back(sample_stats(us).mean);
                }
            } else {
                for (std::size_t a = 0; a < sol.n_atoms; ++a) row.push_back(0.0);
            }
            csv.row(row);
        }
    }

    r.check("multi_jump_fraction", sol.diagnostics.multi_jump_fraction < 1e-3,
            sol.diagnostics.multi_jump_fraction, 1e-3);

    // lattice cross-check under the same constant measure, when applicable
    if (c.cells().size() == 1 && c.cells()[0].branches.size() == 1) {
        const auto& br = c.cells()[0].branches[0];
        const LevyBaseMeasure img = pushforward(F, br.beta);
        const LatticeSolution lat = solve_lattice_1d(br.alpha.value(), img, g, terminal,
                                                     make_pide_grid(cfg));
        const double tol = 3.0 * sol.Y0_se + cfg.tolerances.lattice_tolerance;
        r.check_abs("lattice_agreement", sol.Y0, lat.value0(0.0), tol);
    }

    const NormReport norms = estimate_norms(ctl, sol, g);
    auto csv = r.csv("bsdej_norms.csv", {"d_norm", "h_norm", "j_norm", "phi_norm"});
    csv.row({norms.d_norm, norms.h_norm, norms.j_norm, norms.phi_norm});
    return r.finish("solve-bsdej");
}

// --- solve-2bsdej -----------------------------------------------------------

inline RunResult run_solve_2bsdej(const ExperimentConfig& cfg, Runner& r) {
    const GeneratorSpec g = make_generator(cfg);
    const TerminalFn terminal = make_terminal(cfg.payoff);
    const std::vector<LatticeControl> control_grid = make_control_grid(cfg);
    if (control_grid.empty()) throw ConfigError("control_grid is empty");
    const PideGrid pg = make_pide_grid(cfg);

    const Solution2 sol = solve_lattice(g, control_grid, terminal, pg);
    const double y0 = sol.value0(0.0);
    r.result_.headline_value = y0;
    const double scale = std::max(1.0, std::abs(y0));

    // nodewise domination of every single-control solution
    {
        PideGrid fixed = pg;
        fixed.n_t = sol.n_t;
        double worst = 0.0;
        for (const auto& c : control_grid) {
            const LatticeSolution single = solve_semilinear(c.a, c.nu, g, terminal, fixed);
            for (std::size_t i = 0; i < sol.u.size(); ++i)
                worst = std::min(worst, sol.u[i] - single.u[i]);
        }
        r.check("lattice_domination", worst >= -1e-12, worst, 1e-12);
        if (control_grid.size() == 1) {
            const LatticeSolution single =
                solve_semilinear(control_grid[0].a, control_grid[0].nu, g, terminal, fixed);
            double diff = 0.0;
            for (std::size_t i = 0; i < sol.u.size(); ++i)
                diff = std::max(diff, std::abs(sol.u[i] - single.u[i]));
            r.check("classical_reduction_lattice", diff <= 1e-12, diff, 1e-12);
        }
    }

    // Monte Carlo sup over the separable family
    if (!cfg.control_family.empty()) {
        const LevyBaseMeasure& F = base_measure(cfg);
        const auto grid = uniform_grid(cfg.horizon, cfg.paths.n_steps);
        const SupResult sup =
            sup_over_controls(family(cfg), {F}, g, terminal_payoff(terminal), cfg.paths.n_paths,
                              grid, cfg.seed, cfg.mc_basis_degree, cfg.workers);
        auto csv = r.csv("representation.csv", {"control", "Y0", "se"});
        for (const auto& e : sup.entries) csv.row(e.name, {e.y0, e.se});
        r.check("mc_sup_lower_bound", sup.best_value <= y0 + 3.0 * sup.best_se +
                                          cfg.tolerances.lattice_tolerance,
                sup.best_value, y0 + 3.0 * sup.best_se + cfg.tolerances.lattice_tolerance);
        if (control_grid.size() == 1 && cfg.control_family.size() == 1)
            r.check_abs("classical_reduction_mc", sup.best_value, y0,
                        3.0 * sup.best_se + cfg.tolerances.lattice_tolerance);
    }

    // K extraction over the measure grid (constant controls of the grid)
    {
        const auto grid = uniform_grid(cfg.horizon, cfg.paths.n_steps);
        std::vector<KPaths> ks;
        auto csv = r.csv("k_report.csv",
                         {"measure", "e_kt", "se", "negative_step_fraction", "excluded_fraction"});
        for (std::size_t i = 0; i < control_grid.size(); ++i) {
            const auto& c = control_grid[i];
            const PathBundle ref =
                simulate_reference(c.nu, cfg.paths.n_paths, grid, cfg.seed, cfg.workers);
            const PathBundle bundle = apply_control(
                ref, constant_control(c.a, cfg.horizon, "grid_" + std::to_string(i)), c.nu,
                cfg.workers);
            KPaths k = extract_K(sol, bundle, g, cfg.tolerances.step_tolerance * scale);
            csv.row(k.measure_tag, {k.e_kt, k.se, k.negative_step_fraction, k.excluded_fraction});
            ks.push_back(std::move(k));
        }
        const MinimumConditionReport min_rep =
            check_minimum_condition(ks, cfg.tolerances.k_tolerance_scale * scale);
        r.check("minimum_condition", min_rep.pass, min_rep.min_e_kt,
                cfg.tolerances.k_tolerance_scale * scale, "argmin " + min_rep.argmin_tag);
        r.result_.summary["min_e_kt"] = min_rep.min_e_kt;
        r.result_.summary["min_e_kt_se"] = min_rep.min_se;

        // norm report over the grid bundles, using the lattice fields
        std::vector<NormReport> norms;
        for (std::size_t i = 0; i < control_grid.size(); ++i) {
            const auto& c = control_grid[i];
            const PathBundle ref =
                simulate_reference(c.nu, cfg.paths.n_paths, grid, cfg.seed, cfg.workers);
            const PathBundle bundle = apply_control(
                ref, constant_control(c.a, cfg.horizon, "grid_" + std::to_string(i)), c.nu,
                cfg.workers);
            NormReport n = estimate_norms(bundle, sol, g);
            norms.push_back(std::move(n));
        }
        const NormReport supn = norm_grid_max(norms);
        auto ncsv = r.csv("norm_report.csv", {"measure", "d_norm", "h_norm", "j_norm", "phi_norm"});
        for (const auto& n : norms)
            ncsv.row(n.measure_tag, {n.d_norm, n.h_norm, n.j_norm, n.phi_norm});
        ncsv.row(supn.measure_tag, {supn.d_norm, supn.h_norm, supn.j_norm, supn.phi_norm});
    }
    return r.finish("solve-2bsdej");
}

// --- solve-pide / compare-representation ------------------------------------

inline void write_value_function(Runner& r, const std::string& filename,
                                 const LatticeSolution& sol, std::size_t slices) {
    auto csv = r.csv(filename, {"t", "x", "u"});
    slices = std::max<std::size_t>(2, slices);
    for (std::size_t s = 0; s < slices; ++s) {
        const std::size_t k = s * sol.n_t / (slices - 1);
        for (std::size_t j = 0; j <= sol.grid.n_x; ++j)
            csv.row({sol.t(k), sol.grid.node(j), sol.at(k, j)});
    }
}

inline RunResult run_solve_pide(const ExperimentConfig& cfg, Runner& r) {
    const GeneratorSpec g = make_generator(cfg);
    const TerminalFn terminal = make_terminal(cfg.payoff);
    const std::vector<LatticeControl> control_grid = make_control_grid(cfg);
    if (control_grid.empty()) throw ConfigError("control_grid is empty");

    const LatticeSolution sol =
        control_grid.size() == 1
            ? solve_semilinear(control_grid[0].a, control_grid[0].nu, g, terminal,
                               make_pide_grid(cfg))
            : solve_fullynonlinear(control_grid, g, terminal, make_pide_grid(cfg));
    r.result_.headline_value = sol.value0(0.0);
    write_value_function(r, "value_function.csv", sol, cfg.lattice.csv_time_slices);
    r.check("finite_values", std::isfinite(sol.value0(0.0)), sol.value0(0.0), 0.0);
    return r.finish("solve-pide");
}

inline RunResult run_compare_representation(const ExperimentConfig& cfg, Runner& r) {
    const GeneratorSpec g = make_generator(cfg);
    const TerminalFn terminal = make_terminal(cfg.payoff);
    const std::vector<LatticeControl> control_grid = make_control_grid(cfg);
    if (control_grid.empty()) throw ConfigError("control_grid is empty");

    const GapTable gt = compare_representation(control_grid, g, terminal, make_pide_grid(cfg));
    auto csv = r.csv("gap_table.csv", {"x", "gap"});
    for (std::size_t j = 0; j < gt.x.size(); ++j) csv.row({gt.x[j], gt.gap[j]});
    r.check("gap_nonnegative", gt.min_gap >= -1e-12, gt.min_gap, 1e-12);
    r.result_.summary["max_gap"] = gt.max_gap;
    r.result_.headline_value = gt.max_gap;
    return r.finish("compare-representation");
}

// --- check-k ----------------------------------------------------------------

inline RunResult run_check_k(const ExperimentConfig& cfg, Runner& r) {
    const GeneratorSpec g = make_generator(cfg);
    const TerminalFn terminal = make_terminal(cfg.payoff);
    const std::vector<LatticeControl> control_grid = make_control_grid(cfg);
    if (control_grid.empty()) throw ConfigError("control_grid is empty");

    const Solution2 sol = solve_lattice(g, control_grid, terminal, make_pide_grid(cfg));
    const double scale = std::max(1.0, std::abs(sol.value0(0.0)));
    const auto grid = uniform_grid(cfg.horizon, cfg.paths.n_steps);

    std::vector<KPaths> ks;
    auto csv = r.csv("k_report.csv",
                     {"measure", "e_kt", "se", "negative_step_fraction", "excluded_fraction"});
    for (std::size_t i = 0; i < control_grid.size(); ++i) {
        const auto& c = control_grid[i];
        const PathBundle ref =
            simulate_reference(c.nu, cfg.paths.n_paths, grid, cfg.seed, cfg.workers);
        const PathBundle bundle = apply_control(
            ref, constant_control(c.a, cfg.horizon, "grid_" + std::to_string(i)), c.nu,
            cfg.workers);
        KPaths k = extract_K(sol, bundle, g, cfg.tolerances.step_tolerance * scale);
        csv.row(k.measure_tag, {k.e_kt, k.se, k.negative_step_fraction, k.excluded_fraction});
        r.check("k_nonnegative_steps[" + std::to_string(i) + "]",
                k.negative_step_fraction <= 0.05, k.negative_step_fraction, 0.05);
        ks.push_back(std::move(k));
    }
    const MinimumConditionReport min_rep =
        check_minimum_condition(ks, cfg.tolerances.k_tolerance_scale * scale);
    r.check("minimum_condition", min_rep.pass, min_rep.min_e_kt,
            cfg.tolerances.k_tolerance_scale * scale, "argmin " + min_rep.argmin_tag);
    r.result_.headline_value = min_rep.min_e_kt;
    return r.finish("check-k");
}

// --- appendix-checks ----------------------------------------------------------

inline RunResult run_appendix_checks(const ExperimentConfig& cfg, Runner& r) {
    {
        auto csv = r.csv("inequality_constants.csv", {"n", "delta", "C", "argmax"});
        for (const auto& [n, delta] : cfg.inequality_cases) {
            const InequalityConstant ic = inequality_constant(n, delta);
            csv.row({static_cast<double>(n), delta, ic.c, ic.argmax});
            r.check("inequality_dominates_taylor[n=" + std::to_string(n) + "]",
                    ic.c >= ic.taylor_value, ic.c, ic.taylor_value);
            if (n == 1)
                r.check_abs("inequality_C_1_delta", ic.c, 1.0 / delta, 1e-9);
        }
    }

    const LevyBaseMeasure atoms = cfg.appendix_measure.empty()
                                      ? LevyBaseMeasure::make(std::vector<LevyAtom>{})
                                      : cfg.measure(cfg.appendix_measure);
    const NegativeMomentResult nm =
        negative_moment_mc(cfg.appendix_sigma, atoms, cfg.appendix_delta, cfg.appendix_lambda,
                           cfg.horizon, cfg.paths.n_paths, cfg.seed);
    {
        auto csv = r.csv("negative_moments.csv",
                         {"sigma", "lambda", "t", "estimate", "se", "closed_form"});
        csv.row({cfg.appendix_sigma, cfg.appendix_lambda, cfg.horizon, nm.estimate, nm.se,
                 nm.closed_form});
    }
    r.check_abs("negative_moment_vs_closed_form", nm.estimate, nm.closed_form, 3.0 * nm.se);
    r.check("negative_moment_cauchy", !nm.diverged, nm.diverged ? 1.0 : 0.0, 0.0);

    // pathwise decomposition identity over a fixed ensemble
    {
        const auto grid = uniform_grid(cfg.horizon, 64);
        double worst = 0.0;
        std::vector<double> doleans_T(1000);
        for (std::uint64_t p = 0; p < 1000; ++p) {
            Philox4x32 rng(cfg.seed, p);
            const MartingalePath m = levy_martingale_path(cfg.appendix_sigma, atoms, grid, rng,
                                                          cfg.appendix_delta);
            const auto d = decompose_negative_power(m, cfg.appendix_lambda);
            const auto em = doleans_exponential(m);
            const auto en = doleans_exponential(d.n_tilde);
            doleans_T[p] = em.back();
            for (std::size_t k = 0; k < em.size(); ++k) {
                const double direct = std::pow(em[k], -cfg.appendix_lambda);
                const double product = en[k] * std::exp(d.a_path[k]);
                worst = std::max(worst, std::abs(product - direct) / std::abs(direct));
            }
        }
        r.check("decomposition_identity", worst <= 1e-9, worst, 1e-9);
        const SampleStats s = sample_stats(doleans_T);
        r.check_abs("doleans_mean_one", s.mean, 1.0, 3.0 * s.se);
    }
    return r.finish("appendix-checks");
}

}  // namespace exp_detail

inline RunResult run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_override = {}) {
    const std::filesystem::path out =
        out_override.empty() ? std::filesystem::path(cfg.out_dir) : out_override;
    exp_detail::Runner r(cfg, out);
    if (cfg.experiment == "simulate") return exp_detail::run_simulate(cfg, r);
    if (cfg.experiment == "solve-bsdej") return exp_detail::run_solve_bsdej(cfg, r);
    if (cfg.experiment == "solve-2bsdej") return exp_detail::run_solve_2bsdej(cfg, r);
    if (cfg.experiment == "solve-pide") return exp_detail::run_solve_pide(cfg, r);
    if (cfg.experiment == "compare-representation")
        return exp_detail::run_compare_representation(cfg, r);
    if (cfg.experiment == "check-k") return exp_detail::run_check_k(cfg, r);
    if (cfg.experiment == "appendix-checks") return exp_detail::run_appendix_checks(cfg, r);
    throw ConfigError("unknown experiment '" + cfg.experiment + "'");
}

// Repeats the target experiment with doubled resolution per level and reports
// successive differences; decay must not grow.
inline RunResult run_convergence(const ExperimentConfig& cfg,
                                 const std::filesystem::path& out_override = {}) {
    if (cfg.convergence_levels < 2) throw ConfigError("convergence needs levels >= 2");
    const std::filesystem::path out =
        out_override.empty() ? std::filesystem::path(cfg.out_dir) : out_override;
    exp_detail::Runner r(cfg, out);

    std::vector<double> values;
    for (int level = 0; level < cfg.convergence_levels; ++level) {
        ExperimentConfig sub = cfg;
        sub.experiment = cfg.convergence_target;
        const auto factor = static_cast<std::size_t>(1) << level;
        sub.lattice.n_x = cfg.lattice.n_x * factor;
        sub.lattice.n_t = 0;  // re-derive from the CFL bound
        sub.paths.n_steps = cfg.paths.n_steps * factor;
        sub.paths.n_paths = cfg.paths.n_paths * factor;
        const RunResult inner = run_experiment(sub, out / ("level_" + std::to_string(level)));
        values.push_back(inner.headline_value);
    }

    auto csv = r.csv("convergence.csv", {"level", "value", "change"});
    bool monotone = true;
    double prev_change = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < values.size(); ++l) {
        const double change = l == 0 ? 0.0 : std::abs(values[l] - values[l - 1]);
        csv.row({static_cast<double>(l), values[l], change});
        if (l >= 2 && change > prev_change * 1.5) monotone = false;  // allow noise headroom
        if (l >= 1) prev_change = change;
    }
    r.check("decay_not_increasing", monotone, monotone ? 1.0 : 0.0, 1.0);

    if (cfg.reference_value) {
        auto ecsv = r.csv("convergence_errors.csv", {"level", "error", "ratio"});
        double prev_err = 0.0;
        for (std::size_t l = 0; l < values.size(); ++l) {
            const double err = std::abs(values[l] - *cfg.reference_value);
            ecsv.row({static_cast<double>(l), err, l == 0 ? 0.0 : prev_err / std::max(err, 1e-300)});
            prev_err = err;
        }
    }
    r.result_.headline_value = values.back();
    return r.finish("convergence");
}

}  // namespace jbsde

#endif  // JBSDE_EXPERIMENT_HPP
