#ifndef JBSDE_CONTROLS_HPP
#define JBSDE_CONTROLS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/levy.hpp"
#include "jbsde/rng.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct TimeOutOfRange : Error {
    TimeOutOfRange() : Error("time outside [0, T]") {}
};
struct NonPartition : Error {
    explicit NonPartition(const std::string& what) : Error(what) {}
};

// What a branch predicate is allowed to see: the path value and the running
// jump count at an anchor time (an F_anchor-measurable view).
struct PathObservation {
    double value = 0.0;
    long jumps = 0;
};

using ObservationFn = std::function<PathObservation(double anchor_time)>;

// One test from the fixed predicate vocabulary, anchored at a time <= the
// start of the cell it guards.
struct AtomicPredicate {
    enum class Kind { ValueGE, ValueLT, JumpsGE, JumpsLT };
    Kind kind = Kind::ValueGE;
    double threshold = 0.0;
    double anchor = 0.0;

    bool eval(const ObservationFn& obs) const {
        const PathObservation o = obs(anchor);
        switch (kind) {
            case Kind::ValueGE: return o.value >= threshold;
            case Kind::ValueLT: return o.value < threshold;
            case Kind::JumpsGE: return o.jumps >= static_cast<long>(threshold);
            case Kind::JumpsLT: return o.jumps < static_cast<long>(threshold);
        }
        return false;
    }

    friend bool operator==(const AtomicPredicate&, const AtomicPredicate&) = default;
};

// Conjunction of atomic tests; empty conjunction is "always".
struct EventPredicate {
    std::vector<AtomicPredicate> all_of;

    static EventPredicate always() { return {}; }
    static EventPredicate value_ge(double c, double anchor) {
        return {{{AtomicPredicate::Kind::ValueGE, c, anchor}}};
    }
    static EventPredicate value_lt(double c, double anchor) {
        return {{{AtomicPredicate::Kind::ValueLT, c, anchor}}};
    }
    static EventPredicate jumps_ge(long k, double anchor) {
        return {{{AtomicPredicate::Kind::JumpsGE, static_cast<double>(k), anchor}}};
    }
    static EventPredicate jumps_lt(long k, double anchor) {
        return {{{AtomicPredicate::Kind::JumpsLT, static_cast<double>(k), anchor}}};
    }

    bool eval(const ObservationFn& obs) const {
        for (const auto& p : all_of)
            if (!p.eval(obs)) return false;
        return true;
    }

    EventPredicate and_also(const EventPredicate& other) const {
        EventPredicate r = *this;
        r.all_of.insert(r.all_of.end(), other.all_of.begin(), other.all_of.end());
        return r;
    }

    friend bool operator==(const EventPredicate&, const EventPredicate&) = default;
};

struct ControlBranch {
    EventPredicate when;
    Volatility alpha;
    JumpMapCell beta;
    friend bool operator==(const ControlBranch&, const ControlBranch&) = default;
};

struct ControlCell {
    double start = 0.0;  // tau_n; the cell covers [tau_n, tau_{n+1})
    std::vector<ControlBranch> branches;
    friend bool operator==(const ControlCell&, const ControlCell&) = default;
};

struct ValidationReport {
    struct CellVerdict {
        std::size_t cell = 0;
        bool partition_ok = true;
        bool alpha_ok = true;
        bool beta_monotone_ok = true;
        bool bound_ok = true;
        bool pushforward_ok = true;
    };
    double a_min = 0.0;
    double a_max = 0.0;
    double bound_constant = 0.0;  // tightest |beta| <= C (1 ^ |x|) over cells
    std::vector<CellVerdict> cells;
    bool pass = true;
    std::string detail;
};

// Piecewise-constant control (alpha, beta) on a deterministic breakpoint grid,
// with per-cell branch tables keyed on F_{tau_n}-measurable predicates. These
// are exactly the elements of the separable class the solvers enumerate.
class ControlSpec {
  public:
    ControlSpec() = default;

    static ControlSpec constant(Volatility alpha, JumpMapCell beta, double horizon,
                                std::string name = {}) {
        ControlSpec c;
        c.horizon_ = horizon;
        c.name_ = std::move(name);
        c.cells_.push_back({0.0, {{EventPredicate::always(), std::move(alpha), std::move(beta)}}});
        return c;
    }

    static ControlSpec constant(double alpha, JumpMapCell beta, double horizon,
                                std::string name = {}) {
        return constant(Volatility::scalar(alpha), std::move(beta), horizon, std::move(name));
    }

    static ControlSpec from_cells(std::vector<ControlCell> cells, double horizon,
                                  std::string name = {}) {
        if (cells.empty() || cells.front().start != 0.0)
            throw Error("control cells must start at tau_0 = 0");
        for (std::size_t i = 1; i < cells.size(); ++i)
            if (!(cells[i].start > cells[i - 1].start)) throw Error("breakpoints must increase");
        if (cells.back().start > horizon) throw TimeOutOfRange{};
        ControlSpec c;
        c.cells_ = std::move(cells);
        c.horizon_ = horizon;
        c.name_ = std::move(name);
        return c;
    }

    const std::vector<ControlCell>& cells() const { return cells_; }
    double horizon() const { return horizon_; }
    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }

    std::vector<double> breakpoints() const {
        std::vector<double> b;
        b.reserve(cells_.size());
        for (const auto& c : cells_) b.push_back(c.start);
        return b;
    }

    std::size_t cell_index(double t) const {
        std::size_t n = 0;
        while (n + 1 < cells_.size() && cells_[n + 1].start <= t) ++n;
        return n;
    }

    // First branch whose predicate holds. validate_control certifies that the
    // branches partition the observation space, making "first" unambiguous.
    const ControlBranch& select(double t, const ObservationFn& obs) const {
        const ControlCell& cell = cells_[cell_index(t)];
        for (const auto& b : cell.branches)
            if (b.when.eval(obs)) return b;
        throw NonPartition("no branch matched at t=" + format_double(t));
    }

    friend bool operator==(const ControlSpec&, const ControlSpec&) = default;

  private:
    std::vector<ControlCell> cells_;
    double horizon_ = 1.0;
    std::string name_;
};

namespace detail {

// Cell of c covering time t, with its start clamped to new_start.
inline ControlCell cell_at(const ControlSpec& c, double t, double new_start) {
    ControlCell cell = c.cells()[c.cell_index(t)];
    cell.start = new_start;
    return cell;
}

}  // namespace detail

// c1 on [0, t), c2 on [t, T]. The breakpoint set is the merge of both with t
// inserted.
inline ControlSpec concatenate(const ControlSpec& c1, const ControlSpec& c2, double t) {
    if (c1.horizon() != c2.horizon()) throw Error("concatenate: horizons differ");
    if (t < 0.0 || t > c1.horizon()) throw TimeOutOfRange{};
    std::vector<ControlCell> cells;
    for (const auto& cell : c1.cells())
        if (cell.start < t) cells.push_back(cell);
    if (t < c1.horizon() || cells.empty()) {
        cells.push_back(detail::cell_at(c2, t, t));
        for (const auto& cell : c2.cells())
            if (cell.start > t) cells.push_back(cell);
    }
    return ControlSpec::from_cells(std::move(cells), c1.horizon());
}

namespace detail {

// Deterministic sampler of observation functionals used by the partition
// checks: path values straddle every value threshold, jump counts sweep past
// every count threshold.
inline std::vector<PathObservation> sampled_observations(const std::vector<const EventPredicate*>& preds,
                                                         int n_random = 256) {
    std::vector<double> values{0.0, 1.0, -1.0};
    std::vector<long> counts{0, 1, 2, 5};
    for (const auto* p : preds) {
        for (const auto& a : p->all_of) {
            if (a.kind == AtomicPredicate::Kind::ValueGE || a.kind == AtomicPredicate::Kind::ValueLT) {
                values.push_back(a.threshold);
                values.push_back(a.threshold - 1e-9);
                values.push_back(a.threshold + 1e-9);
                values.push_back(a.threshold - 0.5);
                values.push_back(a.threshold + 0.5);
            } else {
                const long k = static_cast<long>(a.threshold);
                counts.push_back(std::max<long>(0, k - 1));
                counts.push_back(k);
                counts.push_back(k + 1);
            }
        }
    }
    Philox4x32 rng(0x5eedu, 0);
    for (int i = 0; i < n_random; ++i) values.push_back(3.0 * rng.next_normal());
    std::vector<PathObservation> out;
    out.reserve(values.size() * counts.size());
    for (double v : values)
        for (long k : counts) out.push_back({v, k});
    return out;
}

inline ObservationFn flat_observation(const PathObservation& o) {
    return [o](double) { return o; };
}

}  // namespace detail

// base on [0, t); after t, follow branch i on the event {predicate_i}. The
// predicates must partition the path space; this is checked on sampled
// observations before the control is assembled.
inline ControlSpec bifurcate(const std::vector<std::pair<EventPredicate, ControlSpec>>& branches,
                             double t, const ControlSpec& base) {
    if (branches.empty()) throw Error("bifurcate: no branches");
    if (t < 0.0 || t > base.horizon()) throw TimeOutOfRange{};

    std::vector<const EventPredicate*> preds;
    preds.reserve(branches.size());
    for (const auto& [p, c] : branches) {
        if (c.horizon() != base.horizon()) throw Error("bifurcate: horizons differ");
        preds.push_back(&p);
    }
    for (const auto& o : detail::sampled_observations(preds)) {
        int hits = 0;
        for (const auto* p : preds)
            if (p->eval(detail::flat_observation(o))) ++hits;
        if (hits == 0)
            throw NonPartition("gap: no branch covers value=" + format_double(o.value) +
                               " jumps=" + std::to_string(o.jumps));
        if (hits > 1)
            throw NonPartition("overlap: " + std::to_string(hits) + " branches cover value=" +
                               format_double(o.value) + " jumps=" + std::to_string(o.jumps));
    }

    std::vector<ControlCell> cells;
    for (const auto& cell : base.cells())
        if (cell.start < t) cells.push_back(cell);

    // Common refinement of the branch specs' breakpoints after t.
    std::vector<double> cuts{t};
    for (const auto& [p, c] : branches)
        for (double b : c.breakpoints())
            if (b > t) cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    for (double cut : cuts) {
        ControlCell merged{cut, {}};
        for (const auto& [pred, spec] : branches) {
            ControlCell piece = detail::cell_at(spec, cut, cut);
            for (auto& b : piece.branches) {
                ControlBranch nb = b;
                nb.when = pred.and_also(b.when);
                merged.branches.push_back(std::move(nb));
            }
        }
        cells.push_back(std::move(merged));
    }
    return ControlSpec::from_cells(std::move(cells), base.horizon());
}

// Checks every admissibility condition the solvers rely on and reports the
// verdicts rather than throwing.
inline ValidationReport validate_control(const ControlSpec& c, const LevyBaseMeasure& F) {
    ValidationReport r;
    r.a_min = std::numeric_limits<double>::infinity();
    r.a_max = 0.0;
    for (std::size_t n = 0; n < c.cells().size(); ++n) {
        const ControlCell& cell = c.cells()[n];
        ValidationReport::CellVerdict v;
        v.cell = n;

        std::vector<const EventPredicate*> preds;
        for (const auto& b : cell.branches) preds.push_back(&b.when);
        for (const auto& o : detail::sampled_observations(preds)) {
            int hits = 0;
            for (const auto* p : preds)
                if (p->eval(detail::flat_observation(o))) ++hits;
            if (hits != 1) {
                v.partition_ok = false;
                r.detail += "cell " + std::to_string(n) + ": branches do not partition; ";
                break;
            }
        }

        for (const auto& b : cell.branches) {
            if (!b.alpha.positive_definite()) {
                v.alpha_ok = false;
                r.detail += "cell " + std::to_string(n) + ": alpha not positive definite; ";
            } else if (b.alpha.dim == 1) {
                r.a_min = std::min(r.a_min, b.alpha.value());
                r.a_max = std::max(r.a_max, b.alpha.value());
            }
            if (!b.beta.monotone_on(F)) {
                v.beta_monotone_ok = false;
                r.detail += "cell " + std::to_string(n) + ": beta not strictly monotone on atoms; ";
            } else {
                const double tight = b.beta.tightest_bound(F);
                r.bound_constant = std::max(r.bound_constant, tight);
                if (b.beta.bound_constant() > 0.0 && tight > b.beta.bound_constant()) {
                    v.bound_ok = false;
                    r.detail += "cell " + std::to_string(n) + ": |beta| exceeds declared bound; ";
                }
                try {
                    if (!pushforward(F, b.beta).integrable()) v.pushforward_ok = false;
                } catch (const NonInjectiveMap&) {
                    v.pushforward_ok = false;
                    r.detail += "cell " + std::to_string(n) + ": pushforward not injective; ";
                }
            }
        }
        r.pass = r.pass && v.partition_ok && v.alpha_ok && v.beta_monotone_ok && v.bound_ok &&
                 v.pushforward_ok;
        r.cells.push_back(v);
    }
    if (!(r.a_min > 0.0) || r.a_min > r.a_max) r.pass = r.pass && c.cells().empty();
    if (r.cells.empty()) {
        r.pass = false;
        r.detail += "empty control; ";
    }
    return r;
}

}  // namespace jbsde

#endif  // JBSDE_CONTROLS_HPP
