#ifndef JBSDE_PATHS_HPP
#define JBSDE_PATHS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/controls.hpp"
#include "jbsde/levy.hpp"
#include "jbsde/rng.hpp"
#include "jbsde/stats.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct EmptyGrid : Error {
    EmptyGrid() : Error("time grid must contain 0 = t_0 < ... < t_N = T") {}
};
struct MeasureMismatch : Error {
    explicit MeasureMismatch(const std::string& what) : Error(what) {}
};
struct WindowTooLarge : Error {
    WindowTooLarge() : Error("estimator window exceeds the number of steps") {}
};
struct NonInvertibleCell : Error {
    explicit NonInvertibleCell(const std::string& what) : Error(what) {}
};
struct AtomMismatch : Error {
    AtomMismatch() : Error("measures do not share atom locations") {}
};

struct JumpMark {
    double time = 0.0;
    double size = 0.0;
    friend bool operator==(const JumpMark&, const JumpMark&) = default;
};

// Simulated ensemble of canonical paths under one measure. Per step k the
// bookkeeping identity
//     value[k+1] = value[k] + cont_inc[k] + (sum of mark sizes in step) - comp_drift[k]
// holds bit-exactly: cont_inc is the continuous-martingale increment and
// comp_drift is the jump-compensator increment that keeps the path a
// martingale. Jump times are exact (exponential clocks), not grid-snapped.
struct PathBundle {
    std::vector<double> grid;  // 0 = t_0 < ... < t_N = T
    std::size_t n_paths = 0;

    std::vector<double> values;      // (N+1) per path
    std::vector<double> cont_inc;    // N per path
    std::vector<double> comp_drift;  // N per path
    std::vector<double> qv_density;  // N per path: a-hat over [t_k, t_{k+1})

    std::vector<std::vector<JumpMark>> jump_marks;     // per path, sorted by time
    std::vector<LevyBaseMeasure> compensator_catalog;  // distinct per-step compensators
    std::vector<std::uint32_t> comp_idx;               // N per path, index into catalog

    std::uint64_t seed = 0;
    std::string measure_tag;
    LevyBaseMeasure base;  // the generating F (reference measure)

    std::size_t n_steps() const { return grid.empty() ? 0 : grid.size() - 1; }
    double horizon() const { return grid.back(); }
    double dt(std::size_t k) const { return grid[k + 1] - grid[k]; }

    double value(std::size_t p, std::size_t k) const { return values[p * (n_steps() + 1) + k]; }
    double& value(std::size_t p, std::size_t k) { return values[p * (n_steps() + 1) + k]; }
    double cont(std::size_t p, std::size_t k) const { return cont_inc[p * n_steps() + k]; }
    double drift(std::size_t p, std::size_t k) const { return comp_drift[p * n_steps() + k]; }
    double qv(std::size_t p, std::size_t k) const { return qv_density[p * n_steps() + k]; }
    const LevyBaseMeasure& compensator(std::size_t p, std::size_t k) const {
        return compensator_catalog[comp_idx[p * n_steps() + k]];
    }

    // Sum of mark sizes inside (t_k, t_{k+1}].
    double jump_sum(std::size_t p, std::size_t k) const {
        double s = 0.0;
        for (const auto& m : jump_marks[p])
            if (m.time > grid[k] && m.time <= grid[k + 1]) s += m.size;
        return s;
    }

    // Marks of path p inside (t_k, t_{k+1}].
    std::vector<const JumpMark*> marks_in_step(std::size_t p, std::size_t k) const {
        std::vector<const JumpMark*> out;
        for (const auto& m : jump_marks[p])
            if (m.time > grid[k] && m.time <= grid[k + 1]) out.push_back(&m);
        return out;
    }

    long jump_count_upto(std::size_t p, double t) const {
        long n = 0;
        for (const auto& m : jump_marks[p])
            if (m.time <= t) ++n;
        return n;
    }

    void allocate() {
        const std::size_t N = n_steps();
        values.assign(n_paths * (N + 1), 0.0);
        cont_inc.assign(n_paths * N, 0.0);
        comp_drift.assign(n_paths * N, 0.0);
        qv_density.assign(n_paths * N, 0.0);
        comp_idx.assign(n_paths * N, 0);
        jump_marks.assign(n_paths, {});
    }
};

inline std::vector<double> uniform_grid(double horizon, std::size_t n_steps) {
    std::vector<double> g(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k)
        g[k] = horizon * static_cast<double>(k) / static_cast<double>(n_steps);
    return g;
}

inline void check_grid(const std::vector<double>& grid) {
    if (grid.size() < 2 || grid.front() != 0.0) throw EmptyGrid{};
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1])) throw EmptyGrid{};
}

// Canonical process under the reference measure P_{0,F}: standard Brownian
// part plus a compensated compound Poisson with intensity measure F. Each path
// draws from its own counter-based stream, so the ensemble is reproducible for
// any worker count.
inline PathBundle simulate_reference(const LevyBaseMeasure& F, std::size_t n_paths,
                                     std::vector<double> grid, std::uint64_t seed,
                                     int workers = 1) {
    check_grid(grid);
    if (n_paths < 1) throw Error("n_paths must be >= 1");

    PathBundle b;
    b.grid = std::move(grid);
    b.n_paths = n_paths;
    b.seed = seed;
    b.base = F;
    b.measure_tag = "P0[" + (F.label().empty() ? "F" : F.label()) + "]";
    b.compensator_catalog = {F};
    b.allocate();

    const std::size_t N = b.n_steps();
    const double T = b.horizon();
    const double mean_rate = F.mean_rate();

    parallel_for(n_paths, workers, [&](std::size_t p) {
        Philox4x32 rng(b.seed, p);
        for (std::size_t k = 0; k < N; ++k)
            b.cont_inc[p * N + k] = std::sqrt(b.dt(k)) * rng.next_normal();
        auto& marks = b.jump_marks[p];
        for (const auto& atom : F.atoms()) {
            double t = rng.next_exponential(atom.intensity);
            while (t <= T) {
                marks.push_back({t, atom.location});
                t += rng.next_exponential(atom.intensity);
            }
        }
        std::sort(marks.begin(), marks.end(), [](const JumpMark& a, const JumpMark& c) {
            return a.time < c.time || (a.time == c.time && a.size < c.size);
        });
        for (std::size_t k = 0; k < N; ++k) {
            b.comp_drift[p * N + k] = b.dt(k) * mean_rate;
            b.qv_density[p * N + k] = 1.0;
            b.value(p, k + 1) =
                b.value(p, k) + b.cont(p, k) + b.jump_sum(p, k) - b.drift(p, k);
        }
    });
    return b;
}

namespace detail {

// Observation functional for control predicates, evaluated on one path of a
// bundle: path value at the last grid point <= anchor and the running jump
// count at the anchor.
inline ObservationFn bundle_observation(const PathBundle& b, std::size_t p) {
    return [&b, p](double anchor) {
        std::size_t k = 0;
        while (k + 1 <= b.n_steps() && b.grid[k + 1] <= anchor) ++k;
        return PathObservation{b.value(p, k), b.jump_count_upto(p, anchor)};
    };
}

}  // namespace detail

// The controlled process X built from a reference ensemble: scaled continuous
// increments, mapped jump sizes, pushforward compensator. Control predicates
// are evaluated on the reference paths (the canonical process under P_{0,F}).
inline PathBundle apply_control(const PathBundle& bundle, const ControlSpec& c,
                                const LevyBaseMeasure& F, int workers = 1) {
    if (!(bundle.base == F))
        throw MeasureMismatch("bundle was not simulated under the supplied base measure");
    if (c.horizon() != bundle.horizon())
        throw MeasureMismatch("control horizon differs from the bundle horizon");

    PathBundle out;
    out.grid = bundle.grid;
    out.n_paths = bundle.n_paths;
    out.seed = bundle.seed;
    out.base = F;
    out.measure_tag = "P[" + (c.name().empty() ? "control" : c.name()) + ";" +
                      (F.label().empty() ? "F" : F.label()) + "]";
    out.allocate();

    // Pushforward compensators, one catalog entry per (cell, branch).
    const std::size_t n_cells = c.cells().size();
    std::vector<std::vector<std::uint32_t>> cat_idx(n_cells);
    for (std::size_t n = 0; n < n_cells; ++n) {
        for (const auto& br : c.cells()[n].branches) {
            out.compensator_catalog.push_back(pushforward(F, br.beta));
            cat_idx[n].push_back(static_cast<std::uint32_t>(out.compensator_catalog.size() - 1));
        }
    }

    const std::size_t N = bundle.n_steps();
    parallel_for(bundle.n_paths, workers, [&](std::size_t p) {
        const ObservationFn obs = detail::bundle_observation(bundle, p);

        // The branch is constant within a cell (predicates anchor at or before
        // the cell start), so resolve it once per cell.
        std::vector<const ControlBranch*> branch(n_cells, nullptr);
        std::vector<std::uint32_t> branch_cat(n_cells, 0);
        for (std::size_t n = 0; n < n_cells; ++n) {
            const auto& cell = c.cells()[n];
            for (std::size_t j = 0; j < cell.branches.size(); ++j) {
                if (cell.branches[j].when.eval(obs)) {
                    branch[n] = &cell.branches[j];
                    branch_cat[n] = cat_idx[n][j];
                    break;
                }
            }
            if (branch[n] == nullptr) throw NonPartition("no branch matched");
        }

        auto& marks = out.jump_marks[p];
        for (const auto& m : bundle.jump_marks[p]) {
            const std::size_t n = c.cell_index(m.time);
            marks.push_back({m.time, branch[n]->beta.apply(m.size)});
        }

        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t n = c.cell_index(bundle.grid[k]);
            const double a = branch[n]->alpha.value();
            out.cont_inc[p * N + k] = std::sqrt(a) * bundle.cont(p, k);
            out.qv_density[p * N + k] = a;
            out.comp_idx[p * N + k] = branch_cat[n];
            out.comp_drift[p * N + k] =
                bundle.dt(k) * out.compensator_catalog[branch_cat[n]].mean_rate();
            out.value(p, k + 1) =
                out.value(p, k) + out.cont(p, k) + out.jump_sum(p, k) - out.drift(p, k);
        }
    });
    return out;
}

// Rebuilds the reference process from a controlled bundle via alpha^{-1/2} and
// beta^{(-1)}. Forward in time, so the observations feeding the control
// predicates are available from the part already rebuilt.
inline PathBundle reconstruct_reference(const PathBundle& bundle, const ControlSpec& c,
                                        const LevyBaseMeasure& F, int workers = 1) {
    if (c.horizon() != bundle.horizon())
        throw MeasureMismatch("control horizon differs from the bundle horizon");

    PathBundle out;
    out.grid = bundle.grid;
    out.n_paths = bundle.n_paths;
    out.seed = bundle.seed;
    out.base = F;
    out.measure_tag = "P0[" + (F.label().empty() ? "F" : F.label()) + "]#reconstructed";
    out.compensator_catalog = {F};
    out.allocate();

    const std::size_t N = bundle.n_steps();
    const double mean_rate = F.mean_rate();
    const std::size_t n_cells = c.cells().size();

    parallel_for(bundle.n_paths, workers, [&](std::size_t p) {
        const ObservationFn obs = detail::bundle_observation(out, p);
        std::vector<const ControlBranch*> branch(n_cells, nullptr);

        auto resolve = [&](std::size_t n) -> const ControlBranch& {
            if (branch[n] == nullptr) {
                const auto& cell = c.cells()[n];
                for (const auto& br : cell.branches)
                    if (br.when.eval(obs)) {
                        branch[n] = &br;
                        break;
                    }
                if (branch[n] == nullptr) throw NonPartition("no branch matched");
            }
            return *branch[n];
        };

        auto& marks = out.jump_marks[p];
        std::size_t next_mark = 0;
        for (std::size_t k = 0; k < N; ++k) {
            const std::size_t n = c.cell_index(bundle.grid[k]);
            const ControlBranch& br = resolve(n);
            const double a = br.alpha.value();
            out.cont_inc[p * N + k] = bundle.cont(p, k) / std::sqrt(a);
            out.qv_density[p * N + k] = 1.0;
            out.comp_drift[p * N + k] = bundle.dt(k) * mean_rate;

            while (next_mark < bundle.jump_marks[p].size() &&
                   bundle.jump_marks[p][next_mark].time <= bundle.grid[k + 1]) {
                const JumpMark& m = bundle.jump_marks[p][next_mark];
                const std::size_t nm = c.cell_index(m.time);
                const ControlBranch& brm = resolve(nm);
                if (!brm.beta.in_image(m.size))
                    throw NonInvertibleCell("jump size " + format_double(m.size) +
                                            " is not in the image atom set");
                marks.push_back({m.time, brm.beta.invert(m.size)});
                ++next_mark;
            }
            out.value(p, k + 1) =
                out.value(p, k) + out.cont(p, k) + out.jump_sum(p, k) - out.drift(p, k);
        }
    });
    return out;
}

// Backward windowed finite differences of the pathwise continuous bracket.
// The bracket increment uses the step increment net of the (exactly stored)
// jumps, i.e. the discrete version of [B,B] minus the jump squares.
struct QvEstimate {
    int window = 0;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::vector<double> estimate;   // per path, per step k = 1..N (index p*N + k-1)
    std::vector<double> reference;  // generator-known qv_density, same layout
    double mean_abs_error = 0.0;    // per-path error, averaged
    double mean_rel_error = 0.0;    // per-path error over steps with reference > 0
    // errors of the cross-path mean estimate per step (the per-path windowed
    // estimator carries an irreducible 1/sqrt(window) noise floor)
    double ensemble_abs_error = 0.0;
    double ensemble_rel_error = 0.0;

    double at(std::size_t p, std::size_t k) const { return estimate[p * n_steps + (k - 1)]; }
};

inline QvEstimate estimate_qv_density(const PathBundle& b, int window) {
    const std::size_t N = b.n_steps();
    if (window < 1) throw Error("window must be >= 1");
    if (static_cast<std::size_t>(window) > N) throw WindowTooLarge{};

    QvEstimate q;
    q.window = window;
    q.n_paths = b.n_paths;
    q.n_steps = N;
    q.estimate.assign(b.n_paths * N, 0.0);
    q.reference = b.qv_density;

    std::vector<double> abs_err(b.n_paths, 0.0), rel_err(b.n_paths, 0.0);
    for (std::size_t p = 0; p < b.n_paths; ++p) {
        std::vector<double> bracket(N + 1, 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            const double net = (b.value(p, k + 1) - b.value(p, k)) - b.jump_sum(p, k);
            bracket[k + 1] = bracket[k] + net * net;
        }
        double ae = 0.0, re = 0.0;
        std::size_t nrel = 0;
        for (std::size_t k = 1; k <= N; ++k) {
            const std::size_t lo = k > static_cast<std::size_t>(window) ? k - window : 0;
            const double est = (bracket[k] - bracket[lo]) / (b.grid[k] - b.grid[lo]);
            q.estimate[p * N + (k - 1)] = est;
            const double ref = b.qv(p, k - 1);
            ae += std::abs(est - ref);
            if (ref > 0.0) {
                re += std::abs(est - ref) / ref;
                ++nrel;
            }
        }
        abs_err[p] = ae / static_cast<double>(N);
        rel_err[p] = nrel ? re / static_cast<double>(nrel) : 0.0;
    }
    q.mean_abs_error = pairwise_sum(abs_err) / static_cast<double>(b.n_paths);
    q.mean_rel_error = pairwise_sum(rel_err) / static_cast<double>(b.n_paths);

    double ens_abs = 0.0, ens_rel = 0.0;
    std::size_t nrel = 0;
    for (std::size_t k = 0; k < N; ++k) {
        double est_mean = 0.0, ref_mean = 0.0;
        for (std::size_t p = 0; p < b.n_paths; ++p) {
            est_mean += q.estimate[p * N + k];
            ref_mean += q.reference[p * N + k];
        }
        est_mean /= static_cast<double>(b.n_paths);
        ref_mean /= static_cast<double>(b.n_paths);
        ens_abs += std::abs(est_mean - ref_mean);
        if (ref_mean > 0.0) {
            ens_rel += std::abs(est_mean - ref_mean) / ref_mean;
            ++nrel;
        }
    }
    q.ensemble_abs_error = ens_abs / static_cast<double>(N);
    q.ensemble_rel_error = nrel ? ens_rel / static_cast<double>(nrel) : 0.0;
    return q;
}

// Radon-Nikodym density dP2/dP1 on F_T for two finite-activity measures that
// differ only in intensities: prod_i exp((l1_i - l2_i) T) (l2_i/l1_i)^{N_i}.
inline std::vector<double> likelihood_ratio(const PathBundle& b, const LevyBaseMeasure& F1,
                                            const LevyBaseMeasure& F2) {
    if (!F1.same_atoms(F2)) throw AtomMismatch{};
    if (!(b.base == F1))
        throw MeasureMismatch("bundle was not simulated under F1");
    const double T = b.horizon();
    std::vector<double> out(b.n_paths, 1.0);
    for (std::size_t p = 0; p < b.n_paths; ++p) {
        double logd = 0.0;
        for (std::size_t i = 0; i < F1.atoms().size(); ++i) {
            const auto& a1 = F1.atoms()[i];
            const auto& a2 = F2.atoms()[i];
            long n = 0;
            for (const auto& m : b.jump_marks[p])
                if (m.size == a1.location) ++n;
            logd += (a1.intensity - a2.intensity) * T +
                    static_cast<double>(n) * std::log(a2.intensity / a1.intensity);
        }
        out[p] = std::exp(logd);
    }
    return out;
}

// Per-path statistic whose mean vanishes under the second-moment identity
// E[B_T^2] = int E[a-hat] dt + int int x^2 nu(dx) dt.
inline std::vector<double> second_moment_residuals(const PathBundle& b) {
    const std::size_t N = b.n_steps();
    std::vector<double> out(b.n_paths);
    for (std::size_t p = 0; p < b.n_paths; ++p) {
        double predictable = 0.0;
        for (std::size_t k = 0; k < N; ++k)
            predictable += (b.qv(p, k) + b.compensator(p, k).second_moment_rate()) * b.dt(k);
        const double x = b.value(p, N);
        out[p] = x * x - predictable;
    }
    return out;
}

}  // namespace jbsde

#endif  // JBSDE_PATHS_HPP
