#ifndef JBSDE_LATTICE_HPP
#define JBSDE_LATTICE_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/generators.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct CFLViolation : Error {
    explicit CFLViolation(const std::string& what) : Error(what) {}
};
struct GridMismatch : Error {
    explicit GridMismatch(const std::string& what) : Error(what) {}
};
struct EmptyControlGrid : Error {
    EmptyControlGrid() : Error("control grid is empty") {}
};

using TerminalFn = std::function<double(double)>;

// Uniform space/time grid of the explicit schemes. n_t = 0 asks the solver to
// choose the step count from the CFL bound of the stiffest control.
struct PideGrid {
    double x_lo = -10.0;
    double x_hi = 10.0;
    std::size_t n_x = 400;  // intervals; nodes are x_j = x_lo + j dx, j = 0..n_x
    std::size_t n_t = 0;
    double horizon = 1.0;

    enum class Boundary { DirichletTerminal, LinearExtrapolation };
    Boundary boundary = Boundary::DirichletTerminal;

    double dx() const { return (x_hi - x_lo) / static_cast<double>(n_x); }
    double node(std::size_t j) const { return x_lo + dx() * static_cast<double>(j); }
    bool contains(double x) const { return x >= x_lo && x <= x_hi; }
};

// (a, nu) pair of the control grid.
struct LatticeControl {
    double a = 1.0;
    LevyBaseMeasure nu;
};

// Value function on the lattice plus the fields the uniqueness argument reads
// off it: Z from the central difference (d[Y,B]^c = a-hat Z dt) and U from
// displaced-node differences (Delta[Y,B] = U(Delta B) Delta B).
struct LatticeSolution {
    PideGrid grid;
    std::size_t n_t = 0;
    double dt = 0.0;
    std::vector<double> u;               // (n_t+1) x (n_x+1), row k is time t_k
    std::vector<std::uint16_t> argmax;   // per (k, j) control index; empty if singleton
    std::vector<LatticeControl> controls;

    double t(std::size_t k) const { return dt * static_cast<double>(k); }
    double at(std::size_t k, std::size_t j) const { return u[k * (grid.n_x + 1) + j]; }
    double& at(std::size_t k, std::size_t j) { return u[k * (grid.n_x + 1) + j]; }

    std::size_t time_index(double time) const {
        const double r = time / dt;
        std::size_t k = static_cast<std::size_t>(r + 0.5);
        return k > n_t ? n_t : k;
    }

    // Linear interpolation in x at time row k.
    double interp(std::size_t k, double x) const {
        const double s = (x - grid.x_lo) / grid.dx();
        if (s <= 0.0) return at(k, 0);
        if (s >= static_cast<double>(grid.n_x)) return at(k, grid.n_x);
        const auto j = static_cast<std::size_t>(s);
        const double th = s - static_cast<double>(j);
        return (1.0 - th) * at(k, j) + th * at(k, j + 1);
    }

    // dY/dx via central differences, interpolated at x.
    double z_field(std::size_t k, double x) const {
        const double h = grid.dx();
        return (interp(k, x + h) - interp(k, x - h)) / (2.0 * h);
    }

    // U(t, x, z) = Y(t, x + z) - Y(t, x).
    double u_field(std::size_t k, double x, double z) const {
        return interp(k, x + z) - interp(k, x);
    }

    double value0(double x) const { return interp(0, x); }
};

namespace detail {

// Per-atom displacement split onto the uniform grid: x_j + z lands between
// nodes j + shift and j + shift + 1 with weight theta on the right node. The
// atom intensity splits (1-theta, theta), which preserves total mass and keeps
// the stencil monotone.
struct AtomStencil {
    long shift = 0;
    double theta = 0.0;
    double z = 0.0;
    double intensity = 0.0;
};

struct ControlTables {
    double a = 0.0;
    const LevyBaseMeasure* nu = nullptr;
    std::vector<AtomStencil> atoms;
    double total_intensity = 0.0;
    double mean_rate = 0.0;
};

inline ControlTables build_tables(const LatticeControl& c, const PideGrid& g) {
    ControlTables t;
    t.a = c.a;
    t.nu = &c.nu;
    t.total_intensity = c.nu.total_intensity();
    t.mean_rate = c.nu.mean_rate();
    for (const auto& atom : c.nu.atoms()) {
        const double s = atom.location / g.dx();
        const double fl = std::floor(s);
        t.atoms.push_back({static_cast<long>(fl), s - fl, atom.location, atom.intensity});
    }
    return t;
}

}  // namespace detail

// CFL bound of the spec: dt (a / dx^2 + total intensity) <= 1/2 for every
// control; the gradient compensation additionally requires a >= |mean rate| dx
// for the stencil to stay monotone.
inline void check_cfl(const PideGrid& g, double dt, const std::vector<LatticeControl>& controls,
                      double lipschitz_y = 0.0) {
    const double dx = g.dx();
    for (const auto& c : controls) {
        const double rate = c.a / (dx * dx) + c.nu.total_intensity();
        if (dt * rate > 0.5 + 1e-12)
            throw CFLViolation("dt (a/dx^2 + mass) = " + format_double(dt * rate) + " > 1/2");
        if (c.a < std::abs(c.nu.mean_rate()) * dx - 1e-12)
            throw CFLViolation("a < |mean jump rate| dx: gradient term breaks monotonicity");
        if (dt * lipschitz_y > 0.5 + 1e-12)
            throw CFLViolation("dt Lip_y > 1/2");
    }
}

inline std::size_t auto_steps(const PideGrid& g, const std::vector<LatticeControl>& controls,
                              double lipschitz_y = 0.0) {
    const double dx = g.dx();
    double rate = lipschitz_y;
    for (const auto& c : controls)
        rate = std::max(rate, c.a / (dx * dx) + c.nu.total_intensity());
    const auto n = static_cast<std::size_t>(std::ceil(2.0 * g.horizon * rate)) + 1;
    return std::max<std::size_t>(n, 2);
}

// Shared explicit backward kernel. Every lattice entry point (semilinear,
// fully nonlinear, 2BSDEJ) runs through this one code path; a singleton
// control grid therefore reproduces the semilinear solver bit for bit.
inline LatticeSolution lattice_solve(const GeneratorSpec& g,
                                     const std::vector<LatticeControl>& controls,
                                     const TerminalFn& terminal, PideGrid grid,
                                     bool record_argmax = false) {
    if (controls.empty()) throw EmptyControlGrid{};
    if (controls.size() > 1) record_argmax = true;

    LatticeSolution sol;
    if (grid.n_t == 0) grid.n_t = auto_steps(grid, controls, g.lipschitz_y);
    sol.grid = grid;
    sol.n_t = grid.n_t;
    sol.dt = grid.horizon / static_cast<double>(grid.n_t);
    sol.controls = controls;
    check_cfl(grid, sol.dt, controls, g.lipschitz_y);

    const std::size_t J = grid.n_x;
    const double dx = grid.dx();
    sol.u.assign((sol.n_t + 1) * (J + 1), 0.0);
    if (record_argmax) sol.argmax.assign((sol.n_t + 1) * (J + 1), 0);

    std::vector<detail::ControlTables> tables;
    tables.reserve(controls.size());
    for (const auto& c : controls) tables.push_back(detail::build_tables(c, grid));

    for (std::size_t j = 0; j <= J; ++j) sol.at(sol.n_t, j) = terminal(grid.node(j));

    std::vector<double> u_args;  // per-atom displaced differences for the generator
    const bool dirichlet = grid.boundary == PideGrid::Boundary::DirichletTerminal;

    for (std::size_t k = sol.n_t; k-- > 0;) {
        const double* up = &sol.u[(k + 1) * (J + 1)];  // level t_{k+1}
        const double tk = sol.t(k);

        // off-grid evaluation at level k+1
        auto beyond = [&](double x) {
            if (dirichlet) return terminal(x);
            if (x > grid.x_hi) return up[J] + (x - grid.node(J)) / dx * (up[J] - up[J - 1]);
            return up[0] + (grid.node(0) - x) / dx * (up[0] - up[1]);
        };
        auto displaced = [&](std::size_t j, const detail::AtomStencil& s) {
            const long m = static_cast<long>(j) + s.shift;
            const double left =
                (m >= 0 && m <= static_cast<long>(J)) ? up[m] : beyond(grid.node(j) + s.z - s.theta * dx);
            const double right = (m + 1 >= 0 && m + 1 <= static_cast<long>(J))
                                     ? up[m + 1]
                                     : beyond(grid.node(j) + s.z + (1.0 - s.theta) * dx);
            return (1.0 - s.theta) * left + s.theta * right;
        };

        for (std::size_t j = 0; j <= J; ++j) {
            if (dirichlet && (j == 0 || j == J)) {
                sol.at(k, j) = terminal(grid.node(j));
                continue;
            }
            if (!dirichlet && (j == 0 || j == J)) continue;  // extrapolated after the sweep

            const double uc = up[j];
            const double du = (up[j + 1] - up[j - 1]) / (2.0 * dx);
            const double d2u = (up[j + 1] - 2.0 * uc + up[j - 1]) / (dx * dx);

            double best = 0.0;
            std::size_t best_c = 0;
            for (std::size_t ci = 0; ci < tables.size(); ++ci) {
                const auto& tb = tables[ci];
                double nonlocal = 0.0;
                u_args.assign(tb.atoms.size(), 0.0);
                for (std::size_t ai = 0; ai < tb.atoms.size(); ++ai) {
                    const double diff = displaced(j, tb.atoms[ai]) - uc;
                    u_args[ai] = diff;
                    nonlocal += tb.atoms[ai].intensity * diff;
                }
                nonlocal -= tb.mean_rate * du;

                GenArgs args;
                args.t = tk;
                args.x = grid.node(j);
                args.y = uc;
                args.z = du;
                args.u = u_args;
                args.a = tb.a;
                args.nu = tb.nu;
                const double f = g.evaluate_or_throw(args);
                const double cand = uc + sol.dt * (0.5 * tb.a * d2u + nonlocal + f);
                if (ci == 0 || cand > best) {
                    best = cand;
                    best_c = ci;
                }
            }
            sol.at(k, j) = best;
            if (record_argmax) sol.argmax[k * (J + 1) + j] = static_cast<std::uint16_t>(best_c);
        }
        if (!dirichlet) {
            sol.at(k, 0) = 2.0 * sol.at(k, 1) - sol.at(k, 2);
            sol.at(k, J) = 2.0 * sol.at(k, J - 1) - sol.at(k, J - 2);
        }
    }
    return sol;
}

// Semilinear PIDE under one fixed (a, nu): the Feynman-Kac counterpart of the
// classical backward equation, with the jump compensation chosen so the
// underlying process is a martingale.
inline LatticeSolution solve_semilinear(double a, const LevyBaseMeasure& nu,
                                        const GeneratorSpec& f, const TerminalFn& terminal,
                                        const PideGrid& grid) {
    return lattice_solve(f, {{a, nu}}, terminal, grid, false);
}

// Bellman form of the fully nonlinear PIDE: per node, the semilinear one-step
// update maximized over the control grid.
inline LatticeSolution solve_fullynonlinear(const std::vector<LatticeControl>& control_grid,
                                            const GeneratorSpec& g, const TerminalFn& terminal,
                                            const PideGrid& grid) {
    return lattice_solve(g, control_grid, terminal, grid, true);
}

// Nodewise difference u_fullynonlinear(0, x_j) - max over the grid controls of
// u^{a,nu}(0, x_j). Nonnegative up to roundoff; strictly positive entries
// witness the value of adaptive controls.
struct GapTable {
    std::vector<double> x;
    std::vector<double> gap;
    double min_gap = 0.0;
    double max_gap = 0.0;
};

inline GapTable compare_representation(const std::vector<LatticeControl>& control_grid,
                                       const GeneratorSpec& g, const TerminalFn& terminal,
                                       const PideGrid& grid) {
    LatticeSolution full = solve_fullynonlinear(control_grid, g, terminal, grid);
    PideGrid fixed = grid;
    fixed.n_t = full.n_t;  // identical time grids for a fair nodewise comparison

    std::vector<double> best(grid.n_x + 1, -std::numeric_limits<double>::infinity());
    for (const auto& c : control_grid) {
        const LatticeSolution s = solve_semilinear(c.a, c.nu, g, terminal, fixed);
        for (std::size_t j = 0; j <= grid.n_x; ++j)
            best[j] = std::max(best[j], s.at(0, j));
    }
    GapTable gt;
    gt.x.resize(grid.n_x + 1);
    gt.gap.resize(grid.n_x + 1);
    for (std::size_t j = 0; j <= grid.n_x; ++j) {
        gt.x[j] = grid.node(j);
        gt.gap[j] = full.at(0, j) - best[j];
    }
    gt.min_gap = *std::min_element(gt.gap.begin(), gt.gap.end());
    gt.max_gap = *std::max_element(gt.gap.begin(), gt.gap.end());
    return gt;
}

}  // namespace jbsde

#endif  // JBSDE_LATTICE_HPP
