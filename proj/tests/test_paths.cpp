#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "jbsde/paths.hpp"

using namespace jbsde;

namespace {

const double T = 1.0;

std::vector<double> final_values(const PathBundle& b) {
    std::vector<double> x(b.n_paths);
    for (std::size_t p = 0; p < b.n_paths; ++p) x[p] = b.value(p, b.n_steps());
    return x;
}

ControlSpec const_control(double a, JumpMapCell beta) {
    return ControlSpec::constant(a, std::move(beta), T);
}

}  // namespace

TEST_CASE("simulate_reference argument checks") {
    const auto F = LevyBaseMeasure::make({{1.0, 1.0}});
    CHECK_THROWS_AS(simulate_reference(F, 0, uniform_grid(T, 10), 1), Error);
    CHECK_THROWS_AS(simulate_reference(F, 10, {}, 1), EmptyGrid);
    CHECK_THROWS_AS(simulate_reference(F, 10, {0.0, 0.5, 0.5, 1.0}, 1), EmptyGrid);
    CHECK_THROWS_AS(simulate_reference(F, 10, {0.1, 0.5, 1.0}, 1), EmptyGrid);
}

TEST_CASE("pure Brownian ensemble is a centered martingale") {
    const auto F = LevyBaseMeasure::make(std::vector<LevyAtom>{});
    const auto b = simulate_reference(F, 20000, uniform_grid(T, 20), 7);
    for (std::size_t k = 1; k <= b.n_steps(); ++k) {
        std::vector<double> x(b.n_paths);
        for (std::size_t p = 0; p < b.n_paths; ++p) x[p] = b.value(p, k);
        const auto s = sample_stats(x);
        CHECK(std::abs(s.mean) <= 3.0 * s.se);
    }
}

TEST_CASE("compensated jump part keeps the martingale and the second moment") {
    const double lam = 2.0;
    const auto F = LevyBaseMeasure::make({{1.0, lam}});
    const auto b = simulate_reference(F, 40000, uniform_grid(T, 25), 11);

    const auto xT = final_values(b);
    const auto s = sample_stats(xT);
    CHECK(std::abs(s.mean) <= 3.0 * s.se);

    std::vector<double> x2(xT.size());
    for (std::size_t i = 0; i < xT.size(); ++i) x2[i] = xT[i] * xT[i];
    const auto s2 = sample_stats(x2);
    CHECK(std::abs(s2.mean - (T + lam * T)) <= 3.0 * s2.se);

    // same identity through the stored compensator evaluations
    CHECK(within_se(second_moment_residuals(b), 0.0));
}

TEST_CASE("exact path bookkeeping and reproducibility") {
    const auto F = LevyBaseMeasure::make({{1.0, 1.5}, {-0.5, 3.0}});
    const auto b = simulate_reference(F, 500, uniform_grid(T, 40), 123);

    for (std::size_t p = 0; p < b.n_paths; ++p) {
        double v = 0.0;
        for (std::size_t k = 0; k < b.n_steps(); ++k) {
            v = v + b.cont(p, k) + b.jump_sum(p, k) - b.drift(p, k);
            REQUIRE(v == b.value(p, k + 1));  // bit-exact
        }
    }

    const auto b2 = simulate_reference(F, 500, uniform_grid(T, 40), 123);
    CHECK(b.values == b2.values);
    CHECK(b.cont_inc == b2.cont_inc);
    for (std::size_t p = 0; p < b.n_paths; ++p) CHECK(b.jump_marks[p] == b2.jump_marks[p]);

    const auto b3 = simulate_reference(F, 500, uniform_grid(T, 40), 123, /*workers=*/2);
    CHECK(b.values == b3.values);

    const auto b4 = simulate_reference(F, 500, uniform_grid(T, 40), 124);
    CHECK(b.values != b4.values);
}

TEST_CASE("apply_control") {
    const auto F = LevyBaseMeasure::make({{1.0, 2.0}});
    const auto ref = simulate_reference(F, 5000, uniform_grid(T, 30), 21);

    SECTION("identity control reproduces the bundle exactly") {
        const auto x = apply_control(ref, const_control(1.0, JumpMapCell::identity()), F);
        CHECK(x.values == ref.values);
        CHECK(x.cont_inc == ref.cont_inc);
        for (std::size_t p = 0; p < x.n_paths; ++p) CHECK(x.jump_marks[p] == ref.jump_marks[p]);
    }

    SECTION("constant volatility scales the variance") {
        const auto Fe = LevyBaseMeasure::make(std::vector<LevyAtom>{});
        const auto refe = simulate_reference(Fe, 40000, uniform_grid(T, 30), 22);
        const double a = 2.5;
        const auto x = apply_control(refe, const_control(a, JumpMapCell::identity()), Fe);
        const auto xT = final_values(x);
        std::vector<double> sq(xT.size());
        for (std::size_t i = 0; i < xT.size(); ++i) sq[i] = xT[i] * xT[i];
        const auto s = sample_stats(sq);  // E[X_T^2] = a T for the centered martingale
        CHECK(std::abs(s.mean - a * T) <= 3.0 * s.se);
    }

    SECTION("beta doubles every jump size") {
        const auto x = apply_control(ref, const_control(1.0, JumpMapCell::affine(2.0)), F);
        for (std::size_t p = 0; p < x.n_paths; ++p)
            for (const auto& m : x.jump_marks[p]) REQUIRE(m.size == 2.0);
        REQUIRE(x.compensator_catalog.size() == 1);  // one branch, one pushforward
        CHECK(x.compensator(0, 0).atoms()[0].location == 2.0);
        CHECK(x.compensator(0, 0).atoms()[0].intensity == 2.0);
    }

    SECTION("measure mismatch is rejected") {
        const auto other = LevyBaseMeasure::make({{2.0, 1.0}});
        CHECK_THROWS_AS(apply_control(ref, const_control(1.0, JumpMapCell::identity()), other),
                        MeasureMismatch);
    }
}

TEST_CASE("distribution identity: controlled bundle matches direct simulation") {
    // moments of (X_T, total qv, jump count) under apply_control vs an
    // independent direct simulation of the controlled dynamics
    const auto F = LevyBaseMeasure::make({{1.0, 1.0}, {-1.0, 2.0}});
    const double a = 1.7, slope = 0.5;
    const std::size_t n = 30000;

    const auto ref = simulate_reference(F, n, uniform_grid(T, 40), 31);
    const auto ctl = apply_control(ref, const_control(a, JumpMapCell::affine(slope)), F);

    // direct oracle: sqrt(a) W + compensated compound Poisson with mapped atoms
    const auto img = pushforward(F, JumpMapCell::affine(slope));
    std::vector<double> d_xt(n), d_qv(n), d_nj(n);
    for (std::size_t p = 0; p < n; ++p) {
        Philox4x32 rng(777, p);
        const double w = std::sqrt(a * T) * rng.next_normal();
        double jumps = 0.0, qv = a * T;
        long count = 0;
        for (const auto& atom : img.atoms()) {
            double t = rng.next_exponential(atom.intensity);
            while (t <= T) {
                jumps += atom.location;
                qv += atom.location * atom.location;
                ++count;
                t += rng.next_exponential(atom.intensity);
            }
        }
        d_xt[p] = w + jumps - img.mean_rate() * T;
        d_qv[p] = qv;
        d_nj[p] = static_cast<double>(count);
    }

    std::vector<double> c_xt(n), c_qv(n), c_nj(n);
    for (std::size_t p = 0; p < n; ++p) {
        c_xt[p] = ctl.value(p, ctl.n_steps());
        double qv = 0.0;
        for (std::size_t k = 0; k < ctl.n_steps(); ++k) qv += ctl.qv(p, k) * ctl.dt(k);
        for (const auto& m : ctl.jump_marks[p]) qv += m.size * m.size;
        c_qv[p] = qv;
        c_nj[p] = static_cast<double>(ctl.jump_marks[p].size());
    }

    auto check_moments = [](std::vector<double> u, std::vector<double> v) {
        for (int order = 1; order <= 4; ++order) {
            std::vector<double> pu(u.size()), pv(v.size());
            for (std::size_t i = 0; i < u.size(); ++i) pu[i] = std::pow(u[i], order);
            for (std::size_t i = 0; i < v.size(); ++i) pv[i] = std::pow(v[i], order);
            const auto su = sample_stats(pu);
            const auto sv = sample_stats(pv);
            const double se = std::sqrt(su.se * su.se + sv.se * sv.se);
            INFO("moment order " << order);
            CHECK(std::abs(su.mean - sv.mean) <= 3.0 * se);
        }
    };
    check_moments(c_xt, d_xt);
    check_moments(c_qv, d_qv);
    check_moments(c_nj, d_nj);
}

TEST_CASE("qv density estimator") {
    SECTION("constant volatility, no jumps: 10% relative at N=2000, window=50") {
        const auto F = LevyBaseMeasure::make(std::vector<LevyAtom>{});
        const auto ref = simulate_reference(F, 200, uniform_grid(T, 2000), 41);
        const double a = 1.3;
        const auto x = apply_control(ref, const_control(a, JumpMapCell::identity()), F);
        const auto q = estimate_qv_density(x, 50);
        CHECK(q.ensemble_rel_error <= 0.10);
        // per-path noise floor is ~ sqrt(2/window) = 20%; wider windows shrink it
        const auto q200 = estimate_qv_density(x, 200);
        CHECK(q200.mean_rel_error < q.mean_rel_error);
    }
    SECTION("jump-dominated paths: 1e-2 absolute") {
        const auto F = LevyBaseMeasure::make({{1.0, 2.0}});
        const auto ref = simulate_reference(F, 200, uniform_grid(T, 2000), 42);
        const double a = 1e-4;
        const auto x = apply_control(ref, const_control(a, JumpMapCell::identity()), F);
        const auto q = estimate_qv_density(x, 50);
        CHECK(q.ensemble_abs_error <= 1e-2);
    }
    SECTION("window larger than the grid") {
        const auto F = LevyBaseMeasure::make(std::vector<LevyAtom>{});
        const auto b = simulate_reference(F, 10, uniform_grid(T, 20), 43);
        CHECK_THROWS_AS(estimate_qv_density(b, 21), WindowTooLarge);
        CHECK_THROWS_AS(estimate_qv_density(b, 0), Error);
    }
}

TEST_CASE("reconstruct_reference round trip") {
    const auto F = LevyBaseMeasure::make({{1.0, 1.0}, {-0.5, 2.0}});
    const auto ref = simulate_reference(F, 2000, uniform_grid(T, 50), 51);
    const auto c = const_control(2.0, JumpMapCell::affine(0.7));
    const auto x = apply_control(ref, c, F);
    const auto back = reconstruct_reference(x, c, F);

    double max_err = 0.0;
    for (std::size_t p = 0; p < ref.n_paths; ++p)
        for (std::size_t k = 0; k <= ref.n_steps(); ++k)
            max_err = std::max(max_err, std::abs(back.value(p, k) - ref.value(p, k)));
    CHECK(max_err <= 1e-9 * static_cast<double>(ref.n_steps()));

    SECTION("identity control reconstructs exactly") {
        const auto idc = const_control(1.0, JumpMapCell::identity());
        const auto xi = apply_control(ref, idc, F);
        const auto bi = reconstruct_reference(xi, idc, F);
        CHECK(bi.values == ref.values);
    }

    SECTION("tampered jump size is rejected") {
        auto tampered = apply_control(ref, const_control(1.0, JumpMapCell::table({{-0.5, -0.25},
                                                                                  {1.0, 2.0}})),
                                      F);
        bool found = false;
        for (std::size_t p = 0; p < tampered.n_paths && !found; ++p)
            if (!tampered.jump_marks[p].empty()) {
                tampered.jump_marks[p][0].size = 99.0;
                found = true;
            }
        REQUIRE(found);
        CHECK_THROWS_AS(
            reconstruct_reference(tampered,
                                  const_control(1.0, JumpMapCell::table({{-0.5, -0.25},
                                                                         {1.0, 2.0}})),
                                  F),
            NonInvertibleCell);
    }
}

TEST_CASE("likelihood ratio between equivalent jump intensities") {
    const double lam1 = 2.0, lam2 = 3.0;
    const auto F1 = LevyBaseMeasure::make({{1.0, lam1}});
    const auto F2 = LevyBaseMeasure::make({{1.0, lam2}});

    SECTION("identical measures give density 1") {
        const auto b = simulate_reference(F1, 100, uniform_grid(T, 10), 61);
        for (double d : likelihood_ratio(b, F1, F1)) REQUIRE(d == 1.0);
    }
    SECTION("change of intensity integrates to one") {
        const auto b = simulate_reference(F1, 100000, uniform_grid(T, 10), 62);
        const auto d = likelihood_ratio(b, F1, F2);
        CHECK(within_se(d, 1.0));

        // direct-expectation oracle: E[(l2/l1)^N] e^{(l1-l2)T} with N ~ Poisson(l1 T)
        double direct = 0.0, w = std::exp(-lam1 * T);
        for (int k = 0; k < 60; ++k) {
            direct += w * std::pow(lam2 / lam1, k);
            w *= lam1 * T / (k + 1);
        }
        direct *= std::exp((lam1 - lam2) * T);
        CHECK(direct == Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("different atom locations are rejected") {
        const auto b = simulate_reference(F1, 10, uniform_grid(T, 10), 63);
        const auto F3 = LevyBaseMeasure::make({{2.0, lam2}});
        CHECK_THROWS_AS(likelihood_ratio(b, F1, F3), AtomMismatch);
    }
}
