#ifndef JBSDE_GENERATORS_HPP
#define JBSDE_GENERATORS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/levy.hpp"
#include "jbsde/util.hpp"

namespace jbsde {

struct EmptyGridError : Error {
    explicit EmptyGridError(const std::string& what) : Error(what) {}
};
struct BadInterval : Error {
    explicit BadInterval(const std::string& what) : Error(what) {}
};
struct OutOfDomain : Error {
    explicit OutOfDomain(const std::string& what) : Error(what) {}
};

// Arguments of the generator F(t, x, y, z, u, a, nu). u is the value of the
// jump integrand on the atoms of nu (same order), which makes every pairing
// int u gamma dnu a finite sum.
struct GenArgs {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    std::span<const double> u;
    double a = 1.0;
    const LevyBaseMeasure* nu = nullptr;
};

// Interval domain for the quadratic-variation density a (singleton if lo == hi).
struct DomainA {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    static DomainA any() { return {}; }
    static DomainA singleton(double a) { return {a, a}; }
    static DomainA interval(double lo, double hi) {
        if (!(lo > 0.0) || hi < lo) throw BadInterval("need 0 < a1 <= a2");
        return {lo, hi};
    }
    bool contains(double a, double tol = 1e-12) const { return a >= lo - tol && a <= hi + tol; }
    bool is_singleton() const { return lo == hi; }
    friend bool operator==(const DomainA&, const DomainA&) = default;
};

// Domain for the compensator: a finite catalog of measures, or per-atom
// intensity intervals on a fixed atom set, or unconstrained.
struct DomainNu {
    enum class Kind { Any, FiniteSet, IntensityInterval };
    Kind kind = Kind::Any;
    std::vector<LevyBaseMeasure> set;
    std::vector<double> locations;
    std::vector<std::pair<double, double>> intensity_bounds;

    static DomainNu any() { return {}; }
    static DomainNu finite_set(std::vector<LevyBaseMeasure> measures) {
        DomainNu d;
        d.kind = Kind::FiniteSet;
        d.set = std::move(measures);
        return d;
    }
    static DomainNu intensity_interval(std::vector<double> locations,
                                       std::vector<std::pair<double, double>> bounds) {
        if (locations.size() != bounds.size())
            throw BadInterval("one intensity interval per atom location");
        for (const auto& [lo, hi] : bounds)
            if (lo < 0.0 || hi < lo) throw BadInterval("need 0 <= lam1 <= lam2");
        DomainNu d;
        d.kind = Kind::IntensityInterval;
        d.locations = std::move(locations);
        d.intensity_bounds = std::move(bounds);
        return d;
    }

    bool contains(const LevyBaseMeasure& nu, double tol = 1e-12) const {
        switch (kind) {
            case Kind::Any: return true;
            case Kind::FiniteSet:
                for (const auto& m : set)
                    if (m == nu) return true;
                return false;
            case Kind::IntensityInterval: {
                if (nu.size() > locations.size()) return false;
                // every atom of nu must sit at a declared location within bounds;
                // missing atoms are allowed only if their lower bound is 0
                std::vector<bool> used(locations.size(), false);
                for (const auto& atom : nu.atoms()) {
                    bool found = false;
                    for (std::size_t i = 0; i < locations.size(); ++i) {
                        if (!used[i] && locations[i] == atom.location) {
                            if (atom.intensity < intensity_bounds[i].first - tol ||
                                atom.intensity > intensity_bounds[i].second + tol)
                                return false;
                            used[i] = true;
                            found = true;
                            break;
                        }
                    }
                    if (!found) return false;
                }
                for (std::size_t i = 0; i < locations.size(); ++i)
                    if (!used[i] && intensity_bounds[i].first > tol) return false;
                return true;
            }
        }
        return false;
    }
    friend bool operator==(const DomainNu&, const DomainNu&) = default;
};

// Envelope constants of the monotonicity-in-u assumption:
// c1 (1 ^ |x|) <= gamma(x) <= c2 (1 ^ |x|), -1 + delta <= c1 <= 0 <= c2.
struct JumpEnvelope {
    double c1 = 0.0;
    double c2 = 0.0;
    double delta = 1.0;
    friend bool operator==(const JumpEnvelope&, const JumpEnvelope&) = default;
};

// The nonlinearity of the backward equation, with its control domains and the
// regularity constants the validators check against. Out-of-domain evaluations
// are flagged (empty optional), never encoded as large sentinel values.
struct GeneratorSpec {
    std::string name;
    std::function<double(const GenArgs&)> eval;  // called only in-domain
    DomainA domain_a = DomainA::any();
    DomainNu domain_nu = DomainNu::any();
    double lipschitz_y = 0.0;
    double lipschitz_z = 0.0;
    JumpEnvelope jump_env;

    std::optional<double> evaluate(const GenArgs& args) const {
        if (!domain_a.contains(args.a)) return std::nullopt;
        if (args.nu != nullptr && !domain_nu.contains(*args.nu)) return std::nullopt;
        return eval ? eval(args) : 0.0;
    }

    double evaluate_or_throw(const GenArgs& args) const {
        const auto v = evaluate(args);
        if (!v)
            throw OutOfDomain("generator '" + name + "' evaluated outside (a, nu) domain, a=" +
                              format_double(args.a));
        return *v;
    }
};

// The map H(t, x, y, z, u, gamma, v~) together with the finite grids on which
// its conjugate is maximized. v~ is an atom-value vector on `atoms`, extended
// by zero off that set.
struct HSpec {
    std::function<double(const GenArgs&, double gamma, std::span<const double> vtilde)> eval;
    std::vector<double> grid_gamma;
    std::vector<std::vector<double>> grid_v;
    std::vector<double> atoms;  // locations carried by the v~ vectors

    void validate() const {
        if (!eval) throw EmptyGridError("H has no evaluator");
        if (grid_gamma.empty() || grid_v.empty()) throw EmptyGridError("conjugation grids are empty");
        if (std::find(grid_gamma.begin(), grid_gamma.end(), 0.0) == grid_gamma.end())
            throw EmptyGridError("gamma grid must contain 0");
        for (const auto& v : grid_v)
            if (v.size() != atoms.size())
                throw EmptyGridError("v~ vectors must match the declared atom set");
    }
};

namespace detail {

inline double pair_with_measure(std::span<const double> vtilde, const std::vector<double>& locations,
                                const LevyBaseMeasure& nu) {
    double s = 0.0;
    for (const auto& atom : nu.atoms()) {
        for (std::size_t i = 0; i < locations.size(); ++i) {
            if (locations[i] == atom.location) {
                s += vtilde[i] * atom.intensity;
                break;
            }
        }
    }
    return s;
}

}  // namespace detail

// Conjugate of H with respect to (gamma, v~) on the finite grids:
//   F(a, nu) = max over grid of 1/2 a gamma + sum v~(atom) nu(atom) - H(gamma, v~).
// Exact whenever the sup is attained on the grid. Unboundedness (the
// indicator-type conjugates) is detected by re-maximizing on the doubled grid
// and flagged as an empty optional.
inline std::optional<double> fenchel_transform(const HSpec& h, double a, const LevyBaseMeasure& nu,
                                               const GenArgs& args) {
    h.validate();
    auto objective = [&](double gamma, const std::vector<double>& v) {
        return 0.5 * a * gamma + detail::pair_with_measure(v, h.atoms, nu) - h.eval(args, gamma, v);
    };
    double best = -std::numeric_limits<double>::infinity();
    double best_scaled = best;
    std::vector<double> scaled_v;
    for (const double g : h.grid_gamma) {
        for (const auto& v : h.grid_v) {
            best = std::max(best, objective(g, v));
            scaled_v.assign(v.size(), 0.0);
            for (std::size_t i = 0; i < v.size(); ++i) scaled_v[i] = 2.0 * v[i];
            best_scaled = std::max(best_scaled, objective(2.0 * g, scaled_v));
        }
    }
    if (best_scaled > best + 1e-9 * (1.0 + std::abs(best))) return std::nullopt;
    return best;
}

// Linear H (the classical reduction): D1 = {1}, D2 = {nu*}, F = f. The
// resulting measure family is the singleton {P_{nu*}}.
inline GeneratorSpec make_linear_generator(std::function<double(const GenArgs&)> f,
                                           const LevyBaseMeasure& nu_star,
                                           double lipschitz_y = 0.0, double lipschitz_z = 0.0,
                                           JumpEnvelope env = {}, std::string name = "linear") {
    GeneratorSpec g;
    g.name = std::move(name);
    g.eval = std::move(f);
    g.domain_a = DomainA::singleton(1.0);
    g.domain_nu = DomainNu::finite_set({nu_star});
    g.lipschitz_y = lipschitz_y;
    g.lipschitz_z = lipschitz_z;
    g.jump_env = env;
    return g;
}

// The G-Levy generator: F = 0 on [a1,a2] x {lam delta_atom : lam in [lam1, lam2]},
// flagged infinite outside. Degenerate intervals recover the classical case.
inline GeneratorSpec make_glevy_generator(double a1, double a2, double lam1, double lam2,
                                          double atom) {
    if (!(a1 > 0.0) || a2 < a1) throw BadInterval("need 0 < a1 <= a2");
    if (lam1 < 0.0 || lam2 < lam1) throw BadInterval("need 0 <= lam1 <= lam2");
    if (atom == 0.0) throw ZeroAtom{};
    GeneratorSpec g;
    g.name = "glevy";
    g.eval = [](const GenArgs&) { return 0.0; };
    g.domain_a = DomainA::interval(a1, a2);
    g.domain_nu = DomainNu::intensity_interval({atom}, {{lam1, lam2}});
    return g;
}

// H producing the G-Levy generator by conjugation: the sup over
// [a1,a2] x {lam delta_atom} of 1/2 a gamma + lam v~(atom).
inline HSpec make_glevy_hspec(double a1, double a2, double lam1, double lam2, double atom,
                              std::vector<double> grid_gamma, std::vector<double> grid_v_values) {
    HSpec h;
    h.atoms = {atom};
    h.grid_gamma = std::move(grid_gamma);
    for (const double v : grid_v_values) h.grid_v.push_back({v});
    h.eval = [a1, a2, lam1, lam2](const GenArgs&, double gamma, std::span<const double> vtilde) {
        const double va = vtilde.empty() ? 0.0 : vtilde[0];
        return 0.5 * std::max(a1 * gamma, a2 * gamma) + std::max(lam1 * va, lam2 * va);
    };
    return h;
}

// --- Assumption validators -------------------------------------------------

struct LipschitzReport {
    double estimate_y = 0.0;
    double estimate_z = 0.0;
    bool pass = true;
};

// Empirical difference quotients in y and in a^{1/2} z over all sample pairs
// differing in exactly that coordinate.
inline LipschitzReport check_lipschitz(const GeneratorSpec& g, const std::vector<GenArgs>& samples) {
    if (samples.size() < 2) throw Error("check_lipschitz needs at least two samples");
    LipschitzReport r;
    auto same_u = [](std::span<const double> a, std::span<const double> b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) return false;
        return true;
    };
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            const GenArgs& s = samples[i];
            const GenArgs& o = samples[j];
            if (s.t != o.t || s.x != o.x || s.a != o.a || s.nu != o.nu || !same_u(s.u, o.u))
                continue;
            const auto fs = g.evaluate(s);
            const auto fo = g.evaluate(o);
            if (!fs || !fo) continue;
            const double df = std::abs(*fs - *fo);
            if (s.z == o.z && s.y != o.y)
                r.estimate_y = std::max(r.estimate_y, df / std::abs(s.y - o.y));
            if (s.y == o.y && s.z != o.z)
                r.estimate_z = std::max(r.estimate_z, df / (std::sqrt(s.a) * std::abs(s.z - o.z)));
        }
    }
    r.pass = r.estimate_y <= g.lipschitz_y * (1.0 + 1e-6) &&
             r.estimate_z <= g.lipschitz_z * (1.0 + 1e-6);
    return r;
}

struct JumpMonotonicityReport {
    double empirical_c1 = 0.0;
    double empirical_c2 = 0.0;
    bool pass = true;
};

// For each pair (u1, u2) verifies that F(u1) - F(u2) can be written as
// int (u1 - u2) gamma dnu for a kernel inside the declared envelope:
//   min admissible <= dF <= max admissible.
// The empirical constants are the extreme ratios dF / int du (1 ^ |x|) dnu
// over same-sign perturbations.
inline JumpMonotonicityReport check_jump_monotonicity(
    const GeneratorSpec& g, const GenArgs& base,
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& u_samples) {
    JumpMonotonicityReport r;
    if (base.nu == nullptr) throw Error("check_jump_monotonicity needs a compensator");
    const auto& atoms = base.nu->atoms();
    const double c1 = g.jump_env.c1, c2 = g.jump_env.c2;
    bool first_ratio = true;
    for (const auto& [u1, u2] : u_samples) {
        GenArgs a1 = base;
        a1.u = u1;
        GenArgs a2 = base;
        a2.u = u2;
        const auto f1 = g.evaluate(a1);
        const auto f2 = g.evaluate(a2);
        if (!f1 || !f2) continue;
        const double df = *f1 - *f2;

        double hi = 0.0, lo = 0.0, denom = 0.0;
        bool all_nonneg = true, all_nonpos = true;
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            const double du = u1[i] - u2[i];
            const double w = std::min(1.0, std::abs(atoms[i].location)) * atoms[i].intensity;
            hi += du * (du >= 0.0 ? c2 : c1) * w;
            lo += du * (du >= 0.0 ? c1 : c2) * w;
            denom += du * w;
            all_nonneg = all_nonneg && du >= 0.0;
            all_nonpos = all_nonpos && du <= 0.0;
        }
        const double tol = 1e-12 * (1.0 + std::abs(df));
        if (df < lo - tol || df > hi + tol) r.pass = false;
        if ((all_nonneg || all_nonpos) && denom != 0.0) {
            const double ratio = df / denom;
            if (first_ratio) {
                r.empirical_c1 = r.empirical_c2 = ratio;
                first_ratio = false;
            } else {
                r.empirical_c1 = std::min(r.empirical_c1, ratio);
                r.empirical_c2 = std::max(r.empirical_c2, ratio);
            }
        }
    }
    return r;
}

// --- Named generator registry (the config-level extension point) -----------

struct GeneratorParams {
    std::map<std::string, double> num;
    LevyBaseMeasure nu_star;
    double get(const std::string& key, double fallback) const {
        const auto it = num.find(key);
        return it == num.end() ? fallback : it->second;
    }
    double require(const std::string& key) const {
        const auto it = num.find(key);
        if (it == num.end()) throw Error("generator parameter '" + key + "' is required");
        return it->second;
    }
};

using GeneratorFactory = std::function<GeneratorSpec(const GeneratorParams&)>;

class GeneratorRegistry {
  public:
    static GeneratorRegistry& instance() {
        static GeneratorRegistry reg = make_default();
        return reg;
    }

    void add(const std::string& name, GeneratorFactory f) { factories_[name] = std::move(f); }

    bool has(const std::string& name) const { return factories_.count(name) > 0; }

    GeneratorSpec make(const std::string& name, const GeneratorParams& params) const {
        const auto it = factories_.find(name);
        if (it == factories_.end()) throw Error("unknown generator '" + name + "'");
        GeneratorSpec g = it->second(params);
        if (g.name.empty()) g.name = name;
        return g;
    }

  private:
    static GeneratorRegistry make_default() {
        GeneratorRegistry reg;
        reg.add("zero", [](const GeneratorParams& p) {
            return make_linear_generator([](const GenArgs&) { return 0.0; }, p.nu_star, 0.0, 0.0,
                                         {}, "zero");
        });
        reg.add("discount", [](const GeneratorParams& p) {
            const double c = p.require("c");
            return make_linear_generator([c](const GenArgs& a) { return -c * a.y; }, p.nu_star,
                                         std::abs(c), 0.0, {}, "discount");
        });
        // f(u) = int u(x) kappa (1 ^ |x|) nu(dx); jump envelope is tight at kappa.
        reg.add("linear_u", [](const GeneratorParams& p) {
            const double kappa = p.get("kappa", 0.5);
            auto f = [kappa](const GenArgs& a) {
                double s = 0.0;
                const auto& atoms = a.nu->atoms();
                for (std::size_t i = 0; i < atoms.size(); ++i)
                    s += a.u[i] * kappa * std::min(1.0, std::abs(atoms[i].location)) *
                         atoms[i].intensity;
                return s;
            };
            JumpEnvelope env{std::min(kappa, 0.0), std::max(kappa, 0.0), 1.0};
            return make_linear_generator(std::move(f), p.nu_star, 0.0, 0.0, env, "linear_u");
        });
        reg.add("glevy", [](const GeneratorParams& p) {
            return make_glevy_generator(p.require("a1"), p.require("a2"), p.require("lam1"),
                                        p.require("lam2"), p.get("atom", 1.0));
        });
        return reg;
    }

    std::map<std::string, GeneratorFactory> factories_;
};

}  // namespace jbsde

#endif  // JBSDE_GENERATORS_HPP
