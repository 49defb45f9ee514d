#include <catch2/catch_amalgamated.hpp>

#include "jbsde/levy.hpp"
#include "jbsde/rng.hpp"

using namespace jbsde;

TEST_CASE("make_base_measure validates and totals mass") {
    // the pure-jump example measure: 2 delta_{1} + 4 delta_{-1}
    const auto m = LevyBaseMeasure::make({{1.0, 2.0}, {-1.0, 4.0}});
    CHECK(m.total_intensity() == 6.0);
    CHECK(m.second_moment_rate() == 6.0);
    CHECK(m.mean_rate() == -2.0);
    CHECK(m.integrable());

    const auto zero = LevyBaseMeasure::make(std::vector<LevyAtom>{});
    CHECK(zero.empty());
    CHECK(zero.total_intensity() == 0.0);

    CHECK_THROWS_AS(LevyBaseMeasure::make({{1.0, 0.0}}), NonpositiveIntensity);
    CHECK_THROWS_AS(LevyBaseMeasure::make({{1.0, -2.0}}), NonpositiveIntensity);
    CHECK_THROWS_AS(LevyBaseMeasure::make({{0.0, 1.0}}), ZeroAtom);
}

TEST_CASE("pushforward maps atoms and preserves mass") {
    const auto F = LevyBaseMeasure::make({{1.0, 2.0}, {-1.0, 4.0}});

    SECTION("scaling") {
        const auto img = pushforward(F, JumpMapCell::affine(2.0));
        REQUIRE(img.size() == 2);
        CHECK(img.atoms()[0].location == -2.0);
        CHECK(img.atoms()[0].intensity == 4.0);
        CHECK(img.atoms()[1].location == 2.0);
        CHECK(img.atoms()[1].intensity == 2.0);
        CHECK(img.total_intensity() == F.total_intensity());
    }

    SECTION("identity is exact") {
        const auto single = LevyBaseMeasure::make({{1.0, 3.5}});
        const auto img = pushforward(single, JumpMapCell::identity());
        CHECK(img == single);
    }

    SECTION("x^2 collides the two atoms") {
        const auto sq = JumpMapCell::table({{-1.0, 1.0}, {1.0, 1.0}});
        CHECK_THROWS_AS(pushforward(F, sq), NonInjectiveMap);
    }
}

TEST_CASE("pushforward mass conservation under random injective maps") {
    Philox4x32 rng(99, 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<LevyAtom> atoms;
        const int n = 1 + static_cast<int>(rng.next_uniform() * 4);
        for (int i = 0; i < n; ++i)
            atoms.push_back({(i + 1) * (0.25 + rng.next_uniform()), 0.1 + 3.0 * rng.next_uniform()});
        const auto F = LevyBaseMeasure::make(atoms);
        const auto beta = JumpMapCell::affine(0.1 + 5.0 * rng.next_uniform());
        const auto img = pushforward(F, beta);
        CHECK(img.total_intensity() == Catch::Approx(F.total_intensity()).epsilon(1e-15));
    }
}

TEST_CASE("jump map tables invert on their image") {
    const auto t = JumpMapCell::table({{-1.0, -0.5}, {1.0, 2.0}});
    CHECK(t.apply(1.0) == 2.0);
    CHECK(t.invert(2.0) == 1.0);
    CHECK(t.invert(-0.5) == -1.0);
    CHECK(t.in_image(2.0));
    CHECK_FALSE(t.in_image(3.0));
    CHECK_THROWS_AS(t.apply(0.5), Error);
}

TEST_CASE("monotonicity on the atom support") {
    const auto F = LevyBaseMeasure::make({{-1.0, 1.0}, {-0.5, 1.0}, {0.5, 1.0}, {1.0, 1.0}});
    // beta(x) = x^3 - x takes the value 0 at both -1 and 1
    auto cube = [](double x) { return x * x * x - x; };
    std::vector<std::pair<double, double>> entries;
    for (const auto& a : F.atoms()) entries.emplace_back(a.location, cube(a.location));
    const auto beta = JumpMapCell::table(entries);
    CHECK_FALSE(beta.monotone_on(F));
    CHECK(JumpMapCell::affine(3.0).monotone_on(F));
}

TEST_CASE("volatility SPD check") {
    CHECK(Volatility::scalar(1.0).positive_definite());
    CHECK_FALSE(Volatility::scalar(0.0).positive_definite());
    CHECK_FALSE(Volatility::scalar(-1.0).positive_definite());
    const Volatility spd{2, {2.0, 0.5, 0.5, 1.0}};
    CHECK(spd.positive_definite());
    const Volatility indef{2, {1.0, 2.0, 2.0, 1.0}};
    CHECK_FALSE(indef.positive_definite());
    CHECK_THROWS_AS(spd.value(), Error);
}
