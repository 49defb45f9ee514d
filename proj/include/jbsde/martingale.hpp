#ifndef JBSDE_MARTINGALE_HPP
#define JBSDE_MARTINGALE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/levy.hpp"
#include "jbsde/paths.hpp"
#include "jbsde/rng.hpp"
#include "jbsde/stats.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct JumpBelowFloor : Error {
    explicit JumpBelowFloor(double size, double floor)
        : Error("jump of size " + format_double(size) + " below floor " + format_double(floor)) {}
};
struct BadDelta : Error {
    BadDelta() : Error("delta must lie in (0,1)") {}
};

// One discrete path of a local martingale M = M^c + (jumps - compensator).
// cont_inc carries the continuous component including the compensator drift;
// the predictable bracket of the continuous martingale part is stored
// separately, which is all the Doleans-Dade formula needs:
//   E(M)_t = exp(cont_t - 1/2 <M^c>_t) prod_{s <= t} (1 + dM_s).
struct MartingalePath {
    std::vector<double> grid;
    std::vector<double> cont_inc;  // N increments
    std::vector<JumpMark> marks;   // sizes >= -1 + delta
    std::vector<double> bracket;   // <M^c> at grid points, non-decreasing, size N+1
    double delta = 1.0;
    LevyBaseMeasure jump_measure;  // atom sizes/intensities behind the marks (may be empty)

    std::size_t n_steps() const { return grid.size() - 1; }

    void validate() const {
        check_grid(grid);
        if (cont_inc.size() != n_steps() || bracket.size() != grid.size())
            throw Error("martingale path arrays disagree with the grid");
        for (std::size_t k = 1; k < bracket.size(); ++k)
            if (bracket[k] < bracket[k - 1]) throw Error("bracket must be non-decreasing");
        const double floor = -1.0 + delta;
        for (const auto& m : marks)
            if (m.size < floor) throw JumpBelowFloor(m.size, floor);
    }
};

inline MartingalePath brownian_path(double sigma, const std::vector<double>& grid,
                                    Philox4x32& rng) {
    MartingalePath m;
    m.grid = grid;
    m.bracket.resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) m.bracket[k] = sigma * sigma * grid[k];
    m.cont_inc.resize(m.n_steps());
    for (std::size_t k = 0; k < m.n_steps(); ++k)
        m.cont_inc[k] = sigma * std::sqrt(grid[k + 1] - grid[k]) * rng.next_normal();
    return m;
}

// sigma-Brownian part plus a compensated compound Poisson whose atom locations
// are the jump sizes. delta declares the floor -1 + delta the sizes must obey.
inline MartingalePath levy_martingale_path(double sigma, const LevyBaseMeasure& atoms,
                                           const std::vector<double>& grid, Philox4x32& rng,
                                           double delta) {
    const double floor = -1.0 + delta;
    for (const auto& a : atoms.atoms())
        if (a.location < floor) throw JumpBelowFloor(a.location, floor);

    MartingalePath m = brownian_path(sigma, grid, rng);
    m.delta = delta;
    m.jump_measure = atoms;
    const double T = grid.back();
    for (const auto& atom : atoms.atoms()) {
        double t = rng.next_exponential(atom.intensity);
        while (t <= T) {
            m.marks.push_back({t, atom.location});
            t += rng.next_exponential(atom.intensity);
        }
    }
    std::sort(m.marks.begin(), m.marks.end(),
              [](const JumpMark& a, const JumpMark& b) { return a.time < b.time; });
    const double drift = atoms.mean_rate();
    for (std::size_t k = 0; k < m.n_steps(); ++k)
        m.cont_inc[k] -= drift * (grid[k + 1] - grid[k]);
    m.validate();
    return m;
}

// Doleans-Dade exponential along the grid: exact exponentials per step for the
// continuous part, jump factors applied at the exact mark times.
inline std::vector<double> doleans_exponential(const MartingalePath& m) {
    m.validate();
    const std::size_t N = m.n_steps();
    std::vector<double> e(N + 1, 1.0);
    std::size_t next = 0;
    for (std::size_t k = 0; k < N; ++k) {
        double factor = std::exp(m.cont_inc[k] - 0.5 * (m.bracket[k + 1] - m.bracket[k]));
        while (next < m.marks.size() && m.marks[next].time <= m.grid[k + 1]) {
            factor *= 1.0 + m.marks[next].size;
            ++next;
        }
        e[k + 1] = e[k] * factor;
    }
    return e;
}

// Sum of two paths on the same grid (used by the homomorphism property
// E(M)E(N) = E(M + N + [M,N]) for independent, disjoint-jump paths).
inline MartingalePath sum_paths(const MartingalePath& a, const MartingalePath& b) {
    if (a.grid != b.grid) throw Error("paths live on different grids");
    MartingalePath s;
    s.grid = a.grid;
    s.delta = std::min(a.delta, b.delta);
    s.cont_inc.resize(a.cont_inc.size());
    s.bracket.resize(a.bracket.size());
    for (std::size_t k = 0; k < s.cont_inc.size(); ++k)
        s.cont_inc[k] = a.cont_inc[k] + b.cont_inc[k];
    for (std::size_t k = 0; k < s.bracket.size(); ++k) s.bracket[k] = a.bracket[k] + b.bracket[k];
    s.marks = a.marks;
    s.marks.insert(s.marks.end(), b.marks.begin(), b.marks.end());
    std::sort(s.marks.begin(), s.marks.end(),
              [](const JumpMark& x, const JumpMark& y) { return x.time < y.time; });
    return s;
}

// Multiplicative decomposition of the negative power:
//   E(M)^{-lambda} = E(N~) E(A),  A = 1/2 lambda (lambda+1) <M^c> + V,
// where V compensates W_t = sum (1+dM)^{-lambda} - 1 + lambda dM using the
// atom intensities, and N~ has jumps (1+dM)^{-lambda} - 1. With continuous A
// the Lepingle-Memin local martingale is N itself, and the identity is exact
// path by path.
struct NegativePowerDecomposition {
    MartingalePath n_tilde;
    std::vector<double> a_path;  // A at grid points
};

inline NegativePowerDecomposition decompose_negative_power(const MartingalePath& m,
                                                           double lambda) {
    if (!(lambda > 0.0)) throw Error("lambda must be > 0");
    m.validate();
    const std::size_t N = m.n_steps();

    // per-unit-time rate of V from the atom intensities
    double v_rate = 0.0;
    std::vector<LevyAtom> mapped;
    for (const auto& atom : m.jump_measure.atoms()) {
        v_rate += atom.intensity *
                  (std::pow(1.0 + atom.location, -lambda) - 1.0 + lambda * atom.location);
        mapped.push_back({std::pow(1.0 + atom.location, -lambda) - 1.0, atom.intensity});
    }

    NegativePowerDecomposition d;
    d.a_path.resize(N + 1);
    for (std::size_t k = 0; k <= N; ++k)
        d.a_path[k] = 0.5 * lambda * (lambda + 1.0) * m.bracket[k] + v_rate * m.grid[k];

    MartingalePath& n = d.n_tilde;
    n.grid = m.grid;
    n.delta = 1e-12;  // jumps (1+dM)^{-lambda} - 1 > -1 always
    if (!mapped.empty()) {
        // sizes may coincide after mapping; the measure here only records rates
        std::sort(mapped.begin(), mapped.end(),
                  [](const LevyAtom& a, const LevyAtom& b) { return a.location < b.location; });
        std::vector<LevyAtom> merged;
        for (const auto& a : mapped) {
            if (!merged.empty() && merged.back().location == a.location)
                merged.back().intensity += a.intensity;
            else
                merged.push_back(a);
        }
        n.jump_measure = LevyBaseMeasure::make(std::move(merged));
    }
    n.bracket.resize(N + 1);
    for (std::size_t k = 0; k <= N; ++k) n.bracket[k] = lambda * lambda * m.bracket[k];
    n.cont_inc.resize(N);
    for (std::size_t k = 0; k < N; ++k)
        n.cont_inc[k] = -lambda * m.cont_inc[k] - v_rate * (m.grid[k + 1] - m.grid[k]);
    n.marks.reserve(m.marks.size());
    for (const auto& mk : m.marks)
        n.marks.push_back({mk.time, std::pow(1.0 + mk.size, -lambda) - 1.0});
    return d;
}

// Monte Carlo estimate of E[ E(M)_t^{-lambda} ] with the closed-form reference
// exp(1/2 lambda (lambda+1) sigma^2 t) prod_i exp(l_i t (lambda b_i + (1+b_i)^{-lambda} - 1)).
// Divergence is flagged when the estimate is not Cauchy across doubling path
// counts (a heuristic; astronomically heavy tails cannot be told apart from
// finite ones by sampling).
struct NegativeMomentResult {
    double estimate = 0.0;
    double se = 0.0;
    double closed_form = 0.0;
    bool diverged = false;
};

inline NegativeMomentResult negative_moment_mc(double sigma, const LevyBaseMeasure& atoms,
                                               double delta, double lambda, double t,
                                               std::size_t n_paths, std::uint64_t seed) {
    if (!(lambda >= 0.0)) throw Error("lambda must be >= 0");
    const double floor = -1.0 + delta;
    for (const auto& a : atoms.atoms())
        if (a.location < floor) throw JumpBelowFloor(a.location, floor);

    NegativeMomentResult r;
    r.closed_form = std::exp(0.5 * lambda * (lambda + 1.0) * sigma * sigma * t);
    for (const auto& a : atoms.atoms())
        r.closed_form *= std::exp(a.intensity * t *
                                  (lambda * a.location + std::pow(1.0 + a.location, -lambda) - 1.0));

    // E(M)_t sampled exactly: lognormal continuous factor, Poisson jump factors.
    std::vector<double> samples(n_paths);
    const double drift = atoms.mean_rate();
    for (std::size_t p = 0; p < n_paths; ++p) {
        Philox4x32 rng(seed, p);
        const double w = std::sqrt(t) * rng.next_normal();
        double log_e = sigma * w - 0.5 * sigma * sigma * t - drift * t;
        double jump_factor = 1.0;
        for (const auto& a : atoms.atoms()) {
            const double mean = a.intensity * t;
            // Knuth product method
            const double L = std::exp(-mean);
            long n = 0;
            double prod = rng.next_uniform();
            while (prod > L) {
                ++n;
                prod *= rng.next_uniform();
            }
            jump_factor *= std::pow(1.0 + a.location, static_cast<double>(n));
        }
        samples[p] = std::pow(std::exp(log_e) * jump_factor, -lambda);
    }

    const SampleStats full = sample_stats(samples);
    r.estimate = full.mean;
    r.se = full.se;
    if (n_paths >= 4) {
        std::vector<double> half(samples.begin(), samples.begin() + n_paths / 2);
        const SampleStats hs = sample_stats(half);
        if (std::abs(full.mean - hs.mean) > 3.0 * (full.se + hs.se)) r.diverged = true;
    }
    return r;
}

// Certified numeric constant of the elementary inequality
//   (1+x)^{-n} - 1 + n x <= C x^2 on [-1 + delta, infinity).
// The sup of the ratio is attained at finite x (the ratio decays like n/x in
// the tail); a log-dense sweep brackets it and a golden-section pass refines
// the argmax. The x -> 0 limit n(n+1)/2 is included as an analytic candidate.
struct InequalityConstant {
    double c = 0.0;
    double argmax = 0.0;
    double taylor_value = 0.0;  // limit of the ratio at x = 0
    double tail_bound = 0.0;    // ratio bound at the sweep's right edge
    std::size_t sweep_points = 0;
};

inline InequalityConstant inequality_constant(int n, double delta) {
    if (n < 1) throw Error("n must be >= 1");
    if (!(delta > 0.0) || !(delta < 1.0)) throw BadDelta{};

    const double nn = static_cast<double>(n);
    // near 0 the direct form cancels catastrophically; switch to the series
    // ratio = n(n+1)/2 - n(n+1)(n+2)/6 x + n(n+1)(n+2)(n+3)/24 x^2 - ...
    auto ratio = [nn](double x) {
        if (std::abs(x) < 1e-3) {
            const double c0 = nn * (nn + 1.0) / 2.0;
            const double c1 = -c0 * (nn + 2.0) / 3.0;
            const double c2 = -c1 * (nn + 3.0) / 4.0;
            const double c3 = -c2 * (nn + 4.0) / 5.0;
            return c0 + x * (c1 + x * (c2 + x * c3));
        }
        return (std::pow(1.0 + x, -nn) - 1.0 + nn * x) / (x * x);
    };

    InequalityConstant out;
    out.taylor_value = nn * (nn + 1.0) / 2.0;
    out.tail_bound = (nn + 1.0) / 1e6;
    const std::size_t half = 50000;
    out.sweep_points = 2 * half + 1;

    double best_x = -1.0 + delta;
    double best_r = ratio(best_x);
    auto consider = [&](double x) {
        const double r = ratio(x);
        if (r > best_r) {
            best_r = r;
            best_x = x;
        }
    };
    // negative side: x = -1 + exp(u), u from log(delta) to log(1 - 1e-8)
    const double u_lo = std::log(delta), u_hi = std::log(1.0 - 1e-8);
    for (std::size_t i = 0; i <= half; ++i) {
        const double u = u_lo + (u_hi - u_lo) * static_cast<double>(i) / static_cast<double>(half);
        consider(-1.0 + std::exp(u));
    }
    // positive side: log-spaced on [1e-8, 1e6]
    const double v_lo = std::log(1e-8), v_hi = std::log(1e6);
    for (std::size_t i = 0; i <= half; ++i) {
        const double v = v_lo + (v_hi - v_lo) * static_cast<double>(i) / static_cast<double>(half);
        consider(std::exp(v));
    }
    consider(0.0);

    // golden-section refinement around the sweep argmax
    {
        const double phi = 0.6180339887498949;
        double lo = best_x - std::max(1e-6, std::abs(best_x)) * 1e-3;
        double hi = best_x + std::max(1e-6, std::abs(best_x)) * 1e-3;
        lo = std::max(lo, -1.0 + delta);
        for (int it = 0; it < 200; ++it) {
            const double m1 = hi - phi * (hi - lo);
            const double m2 = lo + phi * (hi - lo);
            if (ratio(m1) >= ratio(m2))
                hi = m2;
            else
                lo = m1;
        }
        consider(0.5 * (lo + hi));
    }

    out.c = std::max(best_r, out.taylor_value);
    out.argmax = best_x;
    return out;
}

}  // namespace jbsde

#endif  // JBSDE_MARTINGALE_HPP
