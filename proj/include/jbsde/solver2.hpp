#ifndef JBSDE_SOLVER2_HPP
#define JBSDE_SOLVER2_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/bsdej.hpp"
#include "jbsde/controls.hpp"
#include "jbsde/generators.hpp"
#include "jbsde/lattice.hpp"
#include "jbsde/paths.hpp"
#include "jbsde/stats.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct InvalidControl : Error {
    explicit InvalidControl(const std::string& what) : Error(what) {}
};

// The aggregated second-order solution is the Bellman lattice value function;
// Z and U are read off it through the covariation identities (LatticeSolution
// exposes them as z_field / u_field), and the per-measure K processes are
// extracted a posteriori by extract_K.
using Solution2 = LatticeSolution;

// Dynamic-programming supremum over the control grid: per node, the semilinear
// one-step update maximized over (a, nu). Ties break to the lowest control
// index, so the sweep is worker-count independent.
inline Solution2 solve_lattice(const GeneratorSpec& g,
                               const std::vector<LatticeControl>& control_grid,
                               const TerminalFn& terminal, const PideGrid& grid) {
    return lattice_solve(g, control_grid, terminal, grid, true);
}

// Monte Carlo supremum over a finite family of separable controls. Each
// control is validated, simulated under its base measure, and solved as a
// classical BSDEJ; the max of the Y_0 estimates is a statistical lower bound
// for the second-order value.
struct SupResult {
    struct Entry {
        std::string name;
        double y0 = 0.0;
        double se = 0.0;
    };
    std::vector<Entry> entries;
    std::size_t best_index = 0;
    double best_value = 0.0;
    double best_se = 0.0;
};

inline SupResult sup_over_controls(const std::vector<ControlSpec>& family,
                                   const std::vector<LevyBaseMeasure>& f_catalog,
                                   const GeneratorSpec& g, const PayoffFn& payoff,
                                   std::size_t n_paths, const std::vector<double>& grid,
                                   std::uint64_t seed, int basis_degree = 4, int workers = 1) {
    if (family.empty()) throw EmptyControlGrid{};
    if (f_catalog.empty()) throw Error("empty base-measure catalog");

    SupResult result;
    std::vector<PathBundle> references;  // memoized per distinct base measure
    std::vector<const LevyBaseMeasure*> ref_measures;

    for (std::size_t i = 0; i < family.size(); ++i) {
        const ControlSpec& c = family[i];
        const LevyBaseMeasure& F = f_catalog[std::min(i, f_catalog.size() - 1)];
        const ValidationReport v = validate_control(c, F);
        if (!v.pass)
            throw InvalidControl("control '" + c.name() + "' rejected: " + v.detail);

        std::size_t ri = references.size();
        for (std::size_t r = 0; r < ref_measures.size(); ++r)
            if (*ref_measures[r] == F) {
                ri = r;
                break;
            }
        if (ri == references.size()) {
            references.push_back(simulate_reference(F, n_paths, grid, seed, workers));
            ref_measures.push_back(&F);
        }

        const PathBundle controlled = apply_control(references[ri], c, F, workers);
        const BsdejSolution sol = solve_regression(controlled, g, payoff, basis_degree);
        result.entries.push_back(
            {c.name().empty() ? "control_" + std::to_string(i) : c.name(), sol.Y0, sol.Y0_se});
        if (i == 0 || sol.Y0 > result.best_value) {
            result.best_index = i;
            result.best_value = sol.Y0;
            result.best_se = sol.Y0_se;
        }
    }
    return result;
}

// K^P along the paths of a bundle, accumulated from the defining residual
//   K_t = Y_0 - Y_t - int F ds + int Z dB^c + int int U d(mu - nu dt),
// with (Y, Z, U) read from the lattice fields at the path states. Paths that
// leave the space grid are flagged and excluded.
struct KPaths {
    std::string measure_tag;
    std::vector<std::vector<double>> k;  // per included path, K at grid times
    std::vector<bool> included;
    double excluded_fraction = 0.0;
    double e_kt = 0.0;  // mean K_T over included paths
    double se = 0.0;
    double min_increment = 0.0;  // most negative pathwise step increment (informational)
    // fraction of steps whose cross-path mean increment E[dK_k] falls below
    // -(3 se_k + tol_step); pathwise increments fluctuate with the Ito
    // remainder and are not sign-constrained at finite dt
    double negative_step_fraction = 0.0;
    double tol_step = 0.0;
};

inline KPaths extract_K(const Solution2& sol, const PathBundle& bundle, const GeneratorSpec& g,
                        double tol_step = 1e-3) {
    double a_lo = std::numeric_limits<double>::infinity(), a_hi = 0.0;
    for (const auto& c : sol.controls) {
        a_lo = std::min(a_lo, c.a);
        a_hi = std::max(a_hi, c.a);
    }
    for (double a : bundle.qv_density)
        if (a < a_lo - 1e-12 || a > a_hi + 1e-12)
            throw Error("bundle qv density outside the control grid hull");

    const std::size_t N = bundle.n_steps();
    KPaths out;
    out.measure_tag = bundle.measure_tag;
    out.included.assign(bundle.n_paths, true);
    out.tol_step = tol_step;

    std::vector<double> kts;
    std::vector<double> dn;
    std::vector<std::vector<double>> step_incs(N);  // per step, increments across paths

    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        for (std::size_t k = 0; k <= N; ++k)
            if (!sol.grid.contains(bundle.value(p, k))) {
                out.included[p] = false;
                break;
            }
        if (!out.included[p]) continue;

        std::vector<double> kpath(N + 1, 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            const double t = bundle.grid[k];
            const std::size_t kt = sol.time_index(t);
            const std::size_t kt1 = sol.time_index(bundle.grid[k + 1]);
            const double xk = bundle.value(p, k);
            const double xk1 = bundle.value(p, k + 1);
            const double dt = bundle.dt(k);

            const double yk = sol.interp(kt, xk);
            const double yk1 = sol.interp(kt1, xk1);
            const double zk = sol.z_field(kt, xk);

            const LevyBaseMeasure& comp = bundle.compensator(p, k);
            detail::count_jumps(bundle, p, k, comp, dn);

            std::vector<double> uvals(comp.size(), 0.0);
            double mart_jump = 0.0;
            for (std::size_t a = 0; a < comp.size(); ++a) {
                uvals[a] = sol.u_field(kt, xk, comp.atoms()[a].location);
                mart_jump += uvals[a] * (dn[a] - comp.atoms()[a].intensity * dt);
            }

            GenArgs args;
            args.t = t;
            args.x = xk;
            args.y = yk;
            args.z = zk;
            args.u = uvals;
            args.a = bundle.qv(p, k);
            args.nu = &comp;
            const double f = g.evaluate_or_throw(args);

            const double dk = -(yk1 - yk) - f * dt + zk * bundle.cont(p, k) + mart_jump;
            kpath[k + 1] = kpath[k] + dk;
            step_incs[k].push_back(dk);
            out.min_increment = std::min(out.min_increment, dk);
        }
        kts.push_back(kpath[N]);
        out.k.push_back(std::move(kpath));
    }

    const std::size_t n_excluded = bundle.n_paths - out.k.size();
    out.excluded_fraction = static_cast<double>(n_excluded) / static_cast<double>(bundle.n_paths);
    if (!kts.empty()) {
        const SampleStats s = sample_stats(kts);
        out.e_kt = s.mean;
        out.se = s.se;
    }
    long neg_steps = 0;
    for (std::size_t k = 0; k < N; ++k) {
        if (step_incs[k].empty()) continue;
        const SampleStats s = sample_stats(step_incs[k]);
        if (s.mean < -(3.0 * s.se + tol_step)) ++neg_steps;
    }
    out.negative_step_fraction = static_cast<double>(neg_steps) / static_cast<double>(N);
    return out;
}

// The minimum condition at t = 0 over the measure grid: the smallest E[K_T]
// must vanish within tolerance, and no measure may show systematically
// decreasing K.
struct MinimumConditionReport {
    std::string argmin_tag;
    double min_e_kt = std::numeric_limits<double>::infinity();
    double min_se = 0.0;
    double max_negative_step_fraction = 0.0;
    bool pass = true;
    std::vector<std::pair<std::string, double>> per_measure;  // (tag, E[K_T])
};

inline MinimumConditionReport check_minimum_condition(const std::vector<KPaths>& ks,
                                                      double tolerance,
                                                      double max_violation_fraction = 0.05) {
    if (ks.empty()) throw Error("no K families supplied");
    MinimumConditionReport r;
    for (const auto& k : ks) {
        r.per_measure.emplace_back(k.measure_tag, k.e_kt);
        if (k.e_kt < r.min_e_kt) {
            r.min_e_kt = k.e_kt;
            r.min_se = k.se;
            r.argmin_tag = k.measure_tag;
        }
        r.max_negative_step_fraction =
            std::max(r.max_negative_step_fraction, k.negative_step_fraction);
    }
    r.pass = r.min_e_kt <= tolerance && r.max_negative_step_fraction <= max_violation_fraction;
    return r;
}

// --- Norm estimators (the section-3.2 norms at kappa = 2) -------------------

struct NormReport {
    std::string measure_tag;
    double d_norm = 0.0;    // E[ sup_t |Y_t|^2 ]
    double h_norm = 0.0;    // E[ int |a-hat^{1/2} Z|^2 dt ]
    double j_norm = 0.0;    // E[ int int |U|^2 nu dt ]
    double phi_norm = 0.0;  // E[ ( int |F^{P,0}| dt )^2 ]
    double d_se = 0.0, h_se = 0.0, j_se = 0.0, phi_se = 0.0;
};

namespace detail {

// Per-path field values along a bundle; the common input of the estimators.
struct FieldSampler {
    std::function<double(std::size_t p, std::size_t k)> y;
    std::function<double(std::size_t p, std::size_t k)> z;                   // k < N
    std::function<double(std::size_t p, std::size_t k, std::size_t atom)> u;  // k < N
};

inline NormReport estimate_norms_impl(const PathBundle& b, const GeneratorSpec& g,
                                      const FieldSampler& f) {
    const std::size_t N = b.n_steps();
    std::vector<double> dsamp(b.n_paths), hsamp(b.n_paths), jsamp(b.n_paths), psamp(b.n_paths);
    std::vector<double> uvals;
    for (std::size_t p = 0; p < b.n_paths; ++p) {
        double ysup = 0.0, hacc = 0.0, jacc = 0.0, pacc = 0.0;
        for (std::size_t k = 0; k <= N; ++k) ysup = std::max(ysup, std::abs(f.y(p, k)));
        for (std::size_t k = 0; k < N; ++k) {
            const double dt = b.dt(k);
            const double zk = f.z(p, k);
            hacc += b.qv(p, k) * zk * zk * dt;
            const LevyBaseMeasure& comp = b.compensator(p, k);
            uvals.assign(comp.size(), 0.0);
            for (std::size_t a = 0; a < comp.size(); ++a) {
                uvals[a] = f.u(p, k, a);
                jacc += uvals[a] * uvals[a] * comp.atoms()[a].intensity * dt;
            }
            GenArgs args;
            args.t = b.grid[k];
            args.x = b.value(p, k);
            args.a = b.qv(p, k);
            args.nu = &comp;
            std::vector<double> zero(comp.size(), 0.0);
            args.u = zero;
            pacc += std::abs(g.evaluate_or_throw(args)) * dt;
        }
        dsamp[p] = ysup * ysup;
        hsamp[p] = hacc;
        jsamp[p] = jacc;
        psamp[p] = pacc * pacc;
    }
    NormReport r;
    r.measure_tag = b.measure_tag;
    const SampleStats d = sample_stats(dsamp), h = sample_stats(hsamp), j = sample_stats(jsamp),
                      ph = sample_stats(psamp);
    r.d_norm = d.mean;
    r.h_norm = h.mean;
    r.j_norm = j.mean;
    r.phi_norm = ph.mean;
    r.d_se = d.se;
    r.h_se = h.se;
    r.j_se = j.se;
    r.phi_se = ph.se;
    return r;
}

}  // namespace detail

inline NormReport estimate_norms(const PathBundle& b, const BsdejSolution& sol,
                                 const GeneratorSpec& g) {
    detail::FieldSampler f;
    f.y = [&](std::size_t p, std::size_t k) { return sol.y(p, k); };
    f.z = [&](std::size_t p, std::size_t k) { return sol.z(p, k); };
    f.u = [&](std::size_t p, std::size_t k, std::size_t a) { return sol.u_at(p, k, a); };
    return detail::estimate_norms_impl(b, g, f);
}

inline NormReport estimate_norms(const PathBundle& b, const Solution2& sol,
                                 const GeneratorSpec& g) {
    detail::FieldSampler f;
    f.y = [&](std::size_t p, std::size_t k) {
        return sol.interp(sol.time_index(b.grid[k]), b.value(p, k));
    };
    f.z = [&](std::size_t p, std::size_t k) {
        return sol.z_field(sol.time_index(b.grid[k]), b.value(p, k));
    };
    f.u = [&](std::size_t p, std::size_t k, std::size_t a) {
        return sol.u_field(sol.time_index(b.grid[k]), b.value(p, k),
                           b.compensator(p, k).atoms()[a].location);
    };
    return detail::estimate_norms_impl(b, g, f);
}

// Grid max over a family of per-measure estimates (the outer sup of the norms).
inline NormReport norm_grid_max(const std::vector<NormReport>& reports) {
    if (reports.empty()) throw Error("no norm reports");
    NormReport r = reports.front();
    r.measure_tag = "sup";
    for (const auto& o : reports) {
        if (o.d_norm > r.d_norm) {
            r.d_norm = o.d_norm;
            r.d_se = o.d_se;
        }
        if (o.h_norm > r.h_norm) {
            r.h_norm = o.h_norm;
            r.h_se = o.h_se;
        }
        if (o.j_norm > r.j_norm) {
            r.j_norm = o.j_norm;
            r.j_se = o.j_se;
        }
        if (o.phi_norm > r.phi_norm) {
            r.phi_norm = o.phi_norm;
            r.phi_se = o.phi_se;
        }
    }
    return r;
}

}  // namespace jbsde

#endif  // JBSDE_SOLVER2_HPP
