#ifndef JBSDE_BSDEJ_HPP
#define JBSDE_BSDEJ_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/generators.hpp"
#include "jbsde/lattice.hpp"
#include "jbsde/paths.hpp"
#include "jbsde/regression.hpp"
#include "jbsde/stats.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

using PayoffFn = std::function<double(const PathBundle&, std::size_t path)>;

inline PayoffFn terminal_payoff(std::function<double(double)> f) {
    return [f = std::move(f)](const PathBundle& b, std::size_t p) {
        return f(b.value(p, b.n_steps()));
    };
}

// Solution of the classical backward equation under one measure, on the paths
// of a bundle. U is stored per atom of the step compensator (the pushforward
// preserves the atom count, so the width is constant).
struct BsdejSolution {
    std::vector<double> grid;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t n_atoms = 0;
    std::string measure_tag;

    std::vector<double> Y;  // (N+1) per path
    std::vector<double> Z;  // N per path
    std::vector<double> U;  // N * n_atoms per path

    double Y0 = 0.0;
    double Y0_se = 0.0;
    std::vector<double> residual_se;  // per step, cross-sectional std of the Y-fit residual
    // paths whose regressor lies inside the central 98% of the step's sample;
    // fitted values outside that range are polynomial extrapolation
    std::vector<bool> in_bulk;  // per (path, step), index p * n_steps + k

    struct Diagnostics {
        int basis_size = 0;
        double max_condition = 0.0;
        double multi_jump_fraction = 0.0;  // steps with >= 2 jumps at one atom
    } diagnostics;

    double y(std::size_t p, std::size_t k) const { return Y[p * (n_steps + 1) + k]; }
    double& y(std::size_t p, std::size_t k) { return Y[p * (n_steps + 1) + k]; }
    double z(std::size_t p, std::size_t k) const { return Z[p * n_steps + k]; }
    double u_at(std::size_t p, std::size_t k, std::size_t atom) const {
        return U[(p * n_steps + k) * n_atoms + atom];
    }
};

namespace detail {

// Jump counts per (step, atom) for one path; atoms are matched by exact size
// (mark sizes are produced by the same map that produced the catalog atoms).
inline void count_jumps(const PathBundle& b, std::size_t p, std::size_t k,
                        const LevyBaseMeasure& comp, std::vector<double>& out) {
    out.assign(comp.size(), 0.0);
    for (const auto& m : b.jump_marks[p]) {
        if (m.time <= b.grid[k] || m.time > b.grid[k + 1]) continue;
        for (std::size_t a = 0; a < comp.size(); ++a) {
            if (comp.atoms()[a].location == m.size) {
                out[a] += 1.0;
                break;
            }
        }
    }
}

}  // namespace detail

// Least-squares Monte Carlo for the BSDEJ under the bundle's measure.
//
// Backward induction with explicit generator evaluation at (Y_{k+1}, Z_k, U_k):
//   Z_k : projection of Y_{k+1} dB^c / (a-hat dt),
//   U_k(atom) : projection of Y_{k+1} (dN - lambda dt) / (lambda dt),
//   Y_k : projection of Y_{k+1} + F dt - Z_k dB^c - sum U_k (dN - lambda dt).
// Subtracting the martingale terms before the Y-projection makes the one-step
// residual orthogonal to the basis by construction (normal equations) and
// lowers the regression variance; it does not change the conditional mean.
// The Z and U predictions are two-fold cross-fitted (coefficients from one
// half of the paths applied to the other), so they are independent of each
// path's own increments and the subtraction stays unbiased.
inline BsdejSolution solve_regression(const PathBundle& bundle, const GeneratorSpec& g,
                                      const PayoffFn& payoff, int basis_degree = 4,
                                      double ridge = 1e-10) {
    const std::size_t N = bundle.n_steps();
    const std::size_t P = bundle.n_paths;

    for (const auto& m : bundle.compensator_catalog)
        if (!g.domain_nu.contains(m))
            throw OutOfDomain("bundle compensator outside the generator domain");
    for (double a : bundle.qv_density)
        if (!g.domain_a.contains(a))
            throw OutOfDomain("bundle qv density outside the generator domain");

    BsdejSolution sol;
    sol.grid = bundle.grid;
    sol.n_paths = P;
    sol.n_steps = N;
    sol.n_atoms = bundle.base.size();
    sol.measure_tag = bundle.measure_tag;
    sol.Y.assign(P * (N + 1), 0.0);
    sol.Z.assign(P * N, 0.0);
    sol.U.assign(P * N * sol.n_atoms, 0.0);

    for (std::size_t p = 0; p < P; ++p) sol.y(p, N) = payoff(bundle, p);

    // per-path accumulator of the pathwise representation of Y_0 (for the SE)
    std::vector<double> pathwise(P);
    for (std::size_t p = 0; p < P; ++p) pathwise[p] = sol.y(p, N);

    std::vector<double> x(P), target(P), jumps;
    std::vector<std::vector<double>> dn(P);
    long multi_jump_steps = 0;
    sol.residual_se.assign(N, 0.0);
    sol.in_bulk.assign(P * N, true);

    for (std::size_t k = N; k-- > 0;) {
        const double dt = bundle.dt(k);
        for (std::size_t p = 0; p < P; ++p) x[p] = bundle.value(p, k);
        {
            std::vector<double> sorted = x;
            std::sort(sorted.begin(), sorted.end());
            const double lo = sorted[P / 100];
            const double hi = sorted[P - 1 - P / 100];
            for (std::size_t p = 0; p < P; ++p)
                sol.in_bulk[p * N + k] = x[p] >= lo && x[p] <= hi;
        }
        PolyRegression reg(x, basis_degree, ridge);
        CrossFitRegression xreg(x, basis_degree, ridge);
        sol.diagnostics.basis_size = std::max(sol.diagnostics.basis_size, reg.basis_size());
        sol.diagnostics.max_condition =
            std::max(sol.diagnostics.max_condition,
                     std::max(reg.condition_number(), xreg.condition_number()));

        // Z projection
        for (std::size_t p = 0; p < P; ++p)
            target[p] = sol.y(p, k + 1) * bundle.cont(p, k) / (bundle.qv(p, k) * dt);
        const std::vector<double> zfit = xreg.fit(target);
        for (std::size_t p = 0; p < P; ++p) sol.Z[p * N + k] = zfit[p];

        // U projections, one per atom of the step compensator
        for (std::size_t p = 0; p < P; ++p) {
            detail::count_jumps(bundle, p, k, bundle.compensator(p, k), dn[p]);
            for (double c : dn[p])
                if (c >= 2.0) {
                    ++multi_jump_steps;
                    break;
                }
        }
        for (std::size_t a = 0; a < sol.n_atoms; ++a) {
            for (std::size_t p = 0; p < P; ++p) {
                const double lam = bundle.compensator(p, k).atoms()[a].intensity;
                target[p] = sol.y(p, k + 1) * (dn[p][a] - lam * dt) / (lam * dt);
            }
            const std::vector<double> ufit = xreg.fit(target);
            for (std::size_t p = 0; p < P; ++p) sol.U[(p * N + k) * sol.n_atoms + a] = ufit[p];
        }

        // Y projection of the full one-step bracket
        for (std::size_t p = 0; p < P; ++p) {
            const LevyBaseMeasure& comp = bundle.compensator(p, k);
            GenArgs args;
            args.t = bundle.grid[k];
            args.x = x[p];
            args.y = sol.y(p, k + 1);
            args.z = sol.z(p, k);
            if (sol.n_atoms > 0)
                args.u = std::span<const double>(&sol.U[(p * N + k) * sol.n_atoms], sol.n_atoms);
            args.a = bundle.qv(p, k);
            args.nu = &comp;
            const double f = g.evaluate_or_throw(args);

            double mart = sol.z(p, k) * bundle.cont(p, k);
            for (std::size_t a = 0; a < sol.n_atoms; ++a)
                mart += sol.u_at(p, k, a) * (dn[p][a] - comp.atoms()[a].intensity * dt);
            target[p] = sol.y(p, k + 1) + f * dt - mart;
            pathwise[p] += f * dt - mart;
        }
        const std::vector<double> yfit = reg.fit(target);
        double rss = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            sol.y(p, k) = yfit[p];
            const double r = target[p] - yfit[p];
            rss += r * r;
        }
        sol.residual_se[k] = std::sqrt(rss / static_cast<double>(P));
    }

    sol.diagnostics.multi_jump_fraction =
        static_cast<double>(multi_jump_steps) / static_cast<double>(P * N);
    sol.Y0 = sol.y(0, 0);
    sol.Y0_se = sample_stats(pathwise).se;
    return sol;
}

// 1-D Markov lattice for the same equation under constant (a, nu); shares the
// explicit kernel with the PIDE module.
inline LatticeSolution solve_lattice_1d(double a, const LevyBaseMeasure& nu,
                                        const GeneratorSpec& g, const TerminalFn& terminal,
                                        const PideGrid& grid) {
    return solve_semilinear(a, nu, g, terminal, grid);
}

// Statistics of comparison-theorem violations between two regressions solved
// on the same bundle (caller guarantees xi1 <= xi2 and f1 <= f2). The pass
// rule reads the fitted fields only where they are data-supported: a step
// passes when its worst bulk violation stays within three pooled regression
// residual standard errors. The raw (untrimmed) maximum is reported as well;
// outside the bulk a polynomial fit of a kinked payoff extrapolates freely
// and its sign carries no information about the ordering. The terminal row
// compares the exact payoffs and admits no violation at all.
struct ComparisonReport {
    std::vector<double> violation_fraction;  // per time step, over all paths
    double max_violation = 0.0;              // untrimmed, informational
    double max_bulk_violation = 0.0;
    double pooled_se = 0.0;  // largest pooled residual se across steps
    bool pass = true;
};

inline ComparisonReport check_comparison(const BsdejSolution& s1, const BsdejSolution& s2) {
    if (s1.grid != s2.grid || s1.n_paths != s2.n_paths)
        throw GridMismatch("solutions live on different bundles");
    const std::size_t N = s1.n_steps;
    ComparisonReport r;
    r.violation_fraction.assign(N + 1, 0.0);
    for (std::size_t k = 0; k <= N; ++k) {
        std::size_t bad = 0;
        double worst = 0.0, worst_bulk = 0.0;
        for (std::size_t p = 0; p < s1.n_paths; ++p) {
            const double d = s1.y(p, k) - s2.y(p, k);
            if (d > 0.0) {
                ++bad;
                worst = std::max(worst, d);
                if (k == N || (s1.in_bulk[p * N + k] && s2.in_bulk[p * N + k]))
                    worst_bulk = std::max(worst_bulk, d);
            }
        }
        r.violation_fraction[k] = static_cast<double>(bad) / static_cast<double>(s1.n_paths);
        r.max_violation = std::max(r.max_violation, worst);
        r.max_bulk_violation = std::max(r.max_bulk_violation, worst_bulk);
        double pooled = 0.0;
        if (k < N)
            pooled = std::sqrt(s1.residual_se[k] * s1.residual_se[k] +
                               s2.residual_se[k] * s2.residual_se[k]);
        r.pooled_se = std::max(r.pooled_se, pooled);
        if (worst_bulk > 3.0 * pooled) r.pass = false;
    }
    return r;
}

// Ratio of the D-norm of Y^1 - Y^2 to the L^2 gap of the terminal conditions
// (the shape of the a priori stability estimate).
struct StabilityReport {
    double y_gap = 0.0;   // E[ sup_k |Y1-Y2|^2 ]^{1/2}
    double xi_gap = 0.0;  // E[ |xi1-xi2|^2 ]^{1/2}
    double ratio = 0.0;
    bool degenerate = false;  // xi_gap == 0; ratio reported as 0
};

inline StabilityReport stability_gap(const BsdejSolution& s1, const BsdejSolution& s2,
                                     const std::vector<double>& xi1,
                                     const std::vector<double>& xi2) {
    if (s1.grid != s2.grid || s1.n_paths != s2.n_paths)
        throw GridMismatch("solutions live on different bundles");
    StabilityReport r;
    std::vector<double> supdiff(s1.n_paths), xidiff(s1.n_paths);
    for (std::size_t p = 0; p < s1.n_paths; ++p) {
        double m = 0.0;
        for (std::size_t k = 0; k <= s1.n_steps; ++k)
            m = std::max(m, std::abs(s1.y(p, k) - s2.y(p, k)));
        supdiff[p] = m * m;
        const double d = xi1[p] - xi2[p];
        xidiff[p] = d * d;
    }
    r.y_gap = std::sqrt(sample_stats(supdiff).mean);
    r.xi_gap = std::sqrt(sample_stats(xidiff).mean);
    if (r.xi_gap == 0.0) {
        r.degenerate = true;
        r.ratio = 0.0;
    } else {
        r.ratio = r.y_gap / r.xi_gap;
    }
    return r;
}

}  // namespace jbsde

#endif  // JBSDE_BSDEJ_HPP
