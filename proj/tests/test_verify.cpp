#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tlvi/errors.hpp"
#include "tlvi/verify.hpp"

using namespace tlvi;

namespace {

DiscreteJoint cube8() {
    // (x, y) product law independent of z, two z strata
    DiscreteJoint d;
    d.dz = 1;
    const double xs[2] = {-1.0, 1.5};
    const double ys[2] = {0.0, 2.0};
    const double zs[2] = {0.0, 1.0};
    const double px[2] = {0.3, 0.7};
    const double py[2] = {0.6, 0.4};
    const double pz[2] = {0.25, 0.75};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                d.support.push_back({xs[a], ys[b], {zs[c]}});
                d.probs.push_back(px[a] * py[b] * pz[c]);
            }
    return d;
}

} // namespace

TEST_SUITE("verify") {

TEST_CASE("one-point support: ref and condperm equal the pointwise loss") {
    DiscreteJoint d;
    d.dz = 1;
    d.support = {{0.7, 2.0, {0.3}}};
    d.probs = {1.0};
    const FittedLearner f = FittedLearner::linear(0.1, 1.0, {0.5});
    const double want = sq_loss(2.0, f.predict(0.7, d.support[0].z));
    CHECK(exact_estimand(d, Estimand::RefLoss, f) == doctest::Approx(want).epsilon(1e-14));
    CHECK(exact_estimand(d, Estimand::CondPermLoss, f) ==
          doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("independent 2x2 cube, single z stratum: condperm equals margperm") {
    DiscreteJoint d;
    d.dz = 1;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            d.support.push_back({double(a), double(b), {0.0}});
            d.probs.push_back(0.25);
        }
    const FittedLearner f = FittedLearner::linear(0.0, 1.0, {0.0}); // f(x,z) = x
    const double cp = exact_estimand(d, Estimand::CondPermLoss, f);
    const double mp = exact_estimand(d, Estimand::MargPermLoss, f);
    CHECK(cp == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(mp == doctest::Approx(cp).epsilon(1e-14));
}

TEST_CASE("exhaustive sum is invariant under support reordering") {
    Rng rng(11);
    DiscreteJoint d = random_discrete_joint(rng, 9, 3, 1);
    const FittedLearner f = FittedLearner::linear(0.2, -1.1, {0.8});
    const FittedLearner g = FittedLearner::linear(-0.4, 0.0, {1.3});
    DiscreteJoint rev = d;
    std::reverse(rev.support.begin(), rev.support.end());
    std::reverse(rev.probs.begin(), rev.probs.end());
    for (Estimand k : {Estimand::RefLoss, Estimand::CondPermLoss, Estimand::LocoLoss,
                       Estimand::MargPermLoss}) {
        const double a = exact_estimand(d, k, f, &g);
        const double b = exact_estimand(rev, k, f, &g);
        CHECK(std::abs(a - b) <= 1e-12);
    }
}

TEST_CASE("context plug-in matches the exhaustive sum on random 8-point joints") {
    Rng rng(20250819);
    for (int trial = 0; trial < 20; ++trial) {
        DiscreteJoint d = random_discrete_joint(rng, 8, 2 + trial % 3, 1);
        const FittedLearner f =
            FittedLearner::linear(rng.normal(), rng.normal(), {rng.normal()});
        const FittedLearner g = FittedLearner::linear(rng.normal(), 0.0, {rng.normal()});
        EifContext ctx = make_exact_context(d, f, &g);
        for (Estimand k : {Estimand::RefLoss, Estimand::CondPermLoss, Estimand::LocoLoss,
                           Estimand::MargPermLoss}) {
            CHECK(std::abs(ctx.plugin(k) - exact_estimand(d, k, f, &g)) <= 1e-12);
        }
    }
}

TEST_CASE("gateaux derivative of a constant functional is zero") {
    // all y equal and the learner predicts them exactly, so every loss is 0
    DiscreteJoint d;
    d.dz = 1;
    d.support = {{-1.0, 3.0, {0.0}}, {0.5, 3.0, {0.0}}, {2.0, 3.0, {1.0}}};
    d.probs = {0.2, 0.3, 0.5};
    const FittedLearner f = FittedLearner::linear(3.0, 0.0, {0.0});
    for (Estimand k : {Estimand::RefLoss, Estimand::CondPermLoss, Estimand::LocoLoss,
                       Estimand::MargPermLoss}) {
        for (std::size_t j = 0; j < d.size(); ++j) {
            CHECK(std::abs(gateaux_fd(d, k, f, j, 1e-5, &f)) <= 1e-12);
        }
    }
}

TEST_CASE("mass-preserving mixture of gateaux derivatives vanishes") {
    Rng rng(99);
    DiscreteJoint d = random_discrete_joint(rng, 10, 3, 2);
    const FittedLearner f =
        FittedLearner::linear(rng.normal(), rng.normal(), {rng.normal(), rng.normal()});
    const FittedLearner g =
        FittedLearner::linear(rng.normal(), 0.0, {rng.normal(), rng.normal()});
    for (Estimand k : {Estimand::RefLoss, Estimand::CondPermLoss, Estimand::LocoLoss,
                       Estimand::MargPermLoss}) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            acc += d.probs[j] * gateaux_fd(d, k, f, j, 1e-5, &g);
        }
        CHECK(std::abs(acc) <= 1e-6);
    }
}

TEST_CASE("oversized step is rejected with the admissible bound") {
    Rng rng(5);
    DiscreteJoint d = random_discrete_joint(rng, 6, 2, 1);
    const FittedLearner f = FittedLearner::linear(0.0, 1.0, {0.0});
    CHECK_THROWS_WITH_AS(gateaux_fd(d, Estimand::RefLoss, f, 0, 0.9),
                         doctest::Contains("need t <"), NumericError);
}

TEST_CASE("joint validation rejects malformed inputs") {
    const FittedLearner f = FittedLearner::linear(0.0, 1.0, {0.0});
    DiscreteJoint d;
    d.dz = 1;
    d.support = {{0.0, 0.0, {0.0}}, {1.0, 0.0, {0.0}}};

    SUBCASE("masses must sum to one") {
        d.probs = {0.5, 0.4};
        CHECK_THROWS_AS(exact_estimand(d, Estimand::RefLoss, f), DataError);
    }
    SUBCASE("masses must be positive") {
        d.probs = {1.0, 0.0};
        CHECK_THROWS_AS(exact_estimand(d, Estimand::RefLoss, f), DataError);
    }
    SUBCASE("duplicate support points are rejected") {
        d.support[1] = d.support[0];
        d.probs = {0.5, 0.5};
        CHECK_THROWS_AS(exact_estimand(d, Estimand::RefLoss, f), DataError);
    }
    SUBCASE("support is capped at 50 points") {
        d.support.clear();
        d.probs.clear();
        for (int i = 0; i < 51; ++i) {
            d.support.push_back({double(i), 0.0, {0.0}});
            d.probs.push_back(1.0 / 51.0);
        }
        CHECK_THROWS_AS(exact_estimand(d, Estimand::RefLoss, f), ConfigError);
    }
    SUBCASE("z dimension must be consistent") {
        d.probs = {0.5, 0.5};
        d.support[1].z = {0.0, 1.0};
        CHECK_THROWS_AS(exact_estimand(d, Estimand::RefLoss, f), DataError);
    }
}

TEST_CASE("loco needs the x-free learner") {
    DiscreteJoint d = cube8();
    const FittedLearner f = FittedLearner::linear(0.0, 1.0, {0.0});
    CHECK_THROWS_AS(exact_estimand(d, Estimand::LocoLoss, f), ConfigError);
}

TEST_CASE("certification sweep passes on a quick run") {
    const auto rows = run_eif_check(10, 1234);
    REQUIRE(rows.size() == 4);
    for (const EifCheckRow& r : rows) {
        INFO(estimand_name(r.kind), " max_rel_err=", r.max_rel_err,
             " mean_abs=", r.max_mean_abs);
        CHECK(r.pass);
        CHECK(r.max_rel_err <= r.tol);
        CHECK(r.max_mean_abs <= 1e-10);
    }
}

} // TEST_SUITE
