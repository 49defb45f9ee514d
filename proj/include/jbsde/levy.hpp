#ifndef JBSDE_LEVY_HPP
#define JBSDE_LEVY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "jbsde/util.hpp"

namespace jbsde {

struct ZeroAtom : Error {
    ZeroAtom() : Error("jump atom at location 0") {}
};
struct NonpositiveIntensity : Error {
    NonpositiveIntensity() : Error("atom intensity must be > 0") {}
};
struct NonInjectiveMap : Error {
    explicit NonInjectiveMap(const std::string& what) : Error(what) {}
};

struct LevyAtom {
    double location = 0.0;   // jump size, != 0
    double intensity = 0.0;  // arrival rate per unit time, > 0
    friend bool operator==(const LevyAtom&, const LevyAtom&) = default;
};

// Finite-activity jump intensity measure: a finite list of atoms (x_i, lambda_i).
// Empty atom list means pure diffusion.
class LevyBaseMeasure {
  public:
    LevyBaseMeasure() = default;

    static LevyBaseMeasure make(std::vector<LevyAtom> atoms, std::string label = {}) {
        for (const auto& a : atoms) {
            if (a.location == 0.0) throw ZeroAtom{};
            if (!(a.intensity > 0.0)) throw NonpositiveIntensity{};
        }
        std::sort(atoms.begin(), atoms.end(),
                  [](const LevyAtom& a, const LevyAtom& b) { return a.location < b.location; });
        LevyBaseMeasure m;
        m.atoms_ = std::move(atoms);
        m.label_ = std::move(label);
        return m;
    }

    const std::vector<LevyAtom>& atoms() const { return atoms_; }
    const std::string& label() const { return label_; }
    std::size_t size() const { return atoms_.size(); }
    bool empty() const { return atoms_.empty(); }

    // Sum of lambda_i (total arrival rate).
    double total_intensity() const {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.intensity;
        return s;
    }

    // Sum of lambda_i x_i: the drift removed per unit time to compensate jumps.
    double mean_rate() const {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.intensity * a.location;
        return s;
    }

    // Sum of lambda_i x_i^2: the jump contribution to the quadratic variation rate.
    double second_moment_rate() const {
        double s = 0.0;
        for (const auto& a : atoms_) s += a.intensity * a.location * a.location;
        return s;
    }

    // Integrability of a finite atom list is automatic; the validator computes
    // the two integrals anyway and checks they are finite.
    bool integrable() const {
        double small = 0.0, tail = 0.0;
        for (const auto& a : atoms_) {
            small += a.intensity * std::min(1.0, a.location * a.location);
            if (std::abs(a.location) > 1.0) tail += a.intensity * std::abs(a.location);
        }
        return std::isfinite(small) && std::isfinite(tail);
    }

    bool same_atoms(const LevyBaseMeasure& other) const {
        if (atoms_.size() != other.atoms_.size()) return false;
        for (std::size_t i = 0; i < atoms_.size(); ++i)
            if (atoms_[i].location != other.atoms_[i].location) return false;
        return true;
    }

    friend bool operator==(const LevyBaseMeasure& a, const LevyBaseMeasure& b) {
        return a.atoms_ == b.atoms_;
    }

  private:
    std::vector<LevyAtom> atoms_;
    std::string label_;
};

// Volatility coefficient: positive scalar in d=1, or a symmetric positive
// definite matrix stored row-major. Only d=1 is exercised by the solvers.
struct Volatility {
    int dim = 1;
    std::vector<double> m{1.0};

    static Volatility scalar(double a) { return Volatility{1, {a}}; }

    double value() const {
        if (dim != 1) throw Error("scalar volatility required (only d=1 is exercised)");
        return m[0];
    }

    // Cholesky-based SPD test.
    bool positive_definite() const {
        if (dim < 1 || m.size() != static_cast<std::size_t>(dim) * dim) return false;
        std::vector<double> L(m.size(), 0.0);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j <= i; ++j) {
                if (m[i * dim + j] != m[j * dim + i]) return false;
                double s = m[i * dim + j];
                for (int k = 0; k < j; ++k) s -= L[i * dim + k] * L[j * dim + k];
                if (i == j) {
                    if (!(s > 0.0)) return false;
                    L[i * dim + i] = std::sqrt(s);
                } else {
                    L[i * dim + j] = s / L[j * dim + j];
                }
            }
        }
        return true;
    }

    friend bool operator==(const Volatility&, const Volatility&) = default;
};

// One cell of a jump map beta: either an affine map through the origin with
// positive slope, or a table of strictly increasing values on a fixed atom
// set. Both forms are invertible on the support by construction.
class JumpMapCell {
  public:
    enum class Kind { Affine, Table };

    static JumpMapCell affine(double slope, double bound = 0.0) {
        if (!(slope > 0.0)) throw Error("affine jump map needs positive slope");
        JumpMapCell c;
        c.kind_ = Kind::Affine;
        c.slope_ = slope;
        c.bound_ = bound;
        return c;
    }

    static JumpMapCell identity() { return affine(1.0); }

    // pairs (x_i, beta(x_i)); the table must cover every atom it is applied to.
    static JumpMapCell table(std::vector<std::pair<double, double>> entries, double bound = 0.0) {
        std::sort(entries.begin(), entries.end());
        JumpMapCell c;
        c.kind_ = Kind::Table;
        c.entries_ = std::move(entries);
        c.bound_ = bound;
        return c;
    }

    Kind kind() const { return kind_; }
    double slope() const { return slope_; }
    double bound_constant() const { return bound_; }
    const std::vector<std::pair<double, double>>& entries() const { return entries_; }

    double apply(double x) const {
        if (kind_ == Kind::Affine) return slope_ * x;
        for (const auto& [from, to] : entries_)
            if (from == x) return to;
        throw Error("jump map table has no entry for atom " + format_double(x));
    }

    // Inverse on the image of the atom set; |y - image| tolerance 0 (sizes are
    // stored exactly).
    double invert(double y) const {
        if (kind_ == Kind::Affine) return y / slope_;
        for (const auto& [from, to] : entries_)
            if (to == y) return from;
        throw Error("value " + format_double(y) + " not in jump map image");
    }

    bool in_image(double y) const {
        if (kind_ == Kind::Affine) return true;
        for (const auto& [from, to] : entries_)
            if (to == y) return true;
        return false;
    }

    bool is_identity() const { return kind_ == Kind::Affine && slope_ == 1.0; }

    // Strict monotonicity on the atoms of F (the paper's invertibility condition).
    bool monotone_on(const LevyBaseMeasure& F) const {
        if (kind_ == Kind::Affine) return true;
        double prev = 0.0;
        bool first = true;
        for (const auto& a : F.atoms()) {  // atoms are sorted by location
            double y;
            try {
                y = apply(a.location);
            } catch (const Error&) {
                return false;
            }
            if (!first && !(y > prev)) return false;
            prev = y;
            first = false;
        }
        return true;
    }

    // Smallest C with |beta(x)| <= C (1 ^ |x|) over the atoms of F.
    double tightest_bound(const LevyBaseMeasure& F) const {
        double c = 0.0;
        for (const auto& a : F.atoms())
            c = std::max(c, std::abs(apply(a.location)) / std::min(1.0, std::abs(a.location)));
        return c;
    }

    friend bool operator==(const JumpMapCell& a, const JumpMapCell& b) {
        if (a.kind_ != b.kind_) return false;
        if (a.kind_ == Kind::Affine) return a.slope_ == b.slope_ && a.bound_ == b.bound_;
        return a.entries_ == b.entries_ && a.bound_ == b.bound_;
    }

  private:
    Kind kind_ = Kind::Affine;
    double slope_ = 1.0;
    double bound_ = 0.0;
    std::vector<std::pair<double, double>> entries_;
};

// Image of F under beta: atoms (beta(x_i), lambda_i). Mass is preserved;
// colliding images mean beta was not injective on the support.
inline LevyBaseMeasure pushforward(const LevyBaseMeasure& F, const JumpMapCell& beta) {
    std::vector<LevyAtom> out;
    out.reserve(F.size());
    for (const auto& a : F.atoms()) out.push_back({beta.apply(a.location), a.intensity});
    std::sort(out.begin(), out.end(),
              [](const LevyAtom& a, const LevyAtom& b) { return a.location < b.location; });
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i].location == out[i - 1].location)
            throw NonInjectiveMap("two atoms collide at " + format_double(out[i].location));
    }
    return LevyBaseMeasure::make(std::move(out), F.label().empty() ? "" : F.label() + "#pushforward");
}

}  // namespace jbsde

#endif  // JBSDE_LEVY_HPP
