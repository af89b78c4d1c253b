#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "tlvi/conddens.hpp"
#include "tlvi/data.hpp"
#include "tlvi/eif.hpp"
#include "tlvi/errors.hpp"
#include "tlvi/learners.hpp"
#include "tlvi/rng.hpp"
#include "tlvi/verify.hpp"

using namespace tlvi;

namespace {

// y = 5x + noise, x = rho*z + sqrt(1-rho^2)*u, z standard normal
Dataset linear_gaussian(std::size_t n, double rho, double beta, double sd_noise,
                        Rng& rng) {
    Dataset d;
    d.dz = 1;
    d.y_name = "y";
    d.x_name = "x";
    d.z_names = {"z1"};
    d.y.resize(n);
    d.x.resize(n);
    d.z.resize(n);
    const double s = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 0; i < n; ++i) {
        d.z[i] = rng.normal();
        d.x[i] = rho * d.z[i] + s * rng.normal();
        d.y[i] = beta * d.x[i] + sd_noise * rng.normal();
    }
    return d;
}

} // namespace

TEST_SUITE("eif") {

TEST_CASE("all kinds have exactly mean-zero influence at the plug-in") {
    Rng rng(7);
    DiscreteJoint d = random_discrete_joint(rng, 12, 3, 1);
    const FittedLearner f = FittedLearner::linear(0.5, 1.2, {-0.7});
    const FittedLearner g = FittedLearner::linear(0.1, 0.0, {0.9});
    EifContext ctx = make_exact_context(d, f, &g);
    for (Estimand k : {Estimand::RefLoss, Estimand::CondPermLoss, Estimand::LocoLoss,
                       Estimand::MargPermLoss}) {
        ctx.set_psi_hat(k, ctx.plugin(k));
        double mean = 0.0;
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            mean += ctx.weight(i) * ctx.eif(k, i);
        }
        INFO(estimand_name(k));
        CHECK(std::abs(mean) <= 1e-10);
    }
}

TEST_CASE("condperm influence reduces to ref for an x-free learner") {
    Rng rng(42);
    DiscreteJoint d = random_discrete_joint(rng, 10, 4, 2);
    const FittedLearner f = FittedLearner::linear(0.3, 0.0, {1.1, -0.2});
    EifContext ctx = make_exact_context(d, f, &f);
    ctx.set_psi_hat(Estimand::RefLoss, ctx.plugin(Estimand::RefLoss));
    ctx.set_psi_hat(Estimand::CondPermLoss, ctx.plugin(Estimand::CondPermLoss));
    CHECK(ctx.plugin(Estimand::CondPermLoss) ==
          doctest::Approx(ctx.plugin(Estimand::RefLoss)).epsilon(1e-13));
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        CHECK(eif_condperm(ctx, i) == doctest::Approx(eif_ref(ctx, i)).epsilon(1e-12));
    }
}

TEST_CASE("margperm equals condperm when (x,y) is independent of z and f ignores z") {
    // product joint over two z strata; f depends on x only
    DiscreteJoint d;
    d.dz = 1;
    const double xs[2] = {-1.0, 1.5}, ys[2] = {0.0, 2.0}, zs[2] = {0.0, 1.0};
    const double px[2] = {0.3, 0.7}, py[2] = {0.6, 0.4}, pz[2] = {0.25, 0.75};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                d.support.push_back({xs[a], ys[b], {zs[c]}});
                d.probs.push_back(px[a] * py[b] * pz[c]);
            }
    const FittedLearner f = FittedLearner::linear(0.3, 1.2, {0.0});
    EifContext ctx = make_exact_context(d, f);
    ctx.set_psi_hat(Estimand::CondPermLoss, ctx.plugin(Estimand::CondPermLoss));
    ctx.set_psi_hat(Estimand::MargPermLoss, ctx.plugin(Estimand::MargPermLoss));
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        CHECK(eif_margperm(ctx, i) ==
              doctest::Approx(eif_condperm(ctx, i)).epsilon(1e-12));
    }
}

TEST_CASE("perfect noiseless learner zeroes the ref influence") {
    DiscreteJoint d;
    d.dz = 1;
    const FittedLearner f = FittedLearner::linear(1.0, 2.0, {-1.0});
    for (int i = 0; i < 5; ++i) {
        const double x = 0.3 * i - 1.0, z = 0.5 * i;
        d.support.push_back({x, f.predict(x, {&z, 1}), {z}});
        d.probs.push_back(0.2);
    }
    EifContext ctx = make_exact_context(d, f);
    ctx.set_psi_hat(Estimand::RefLoss, ctx.plugin(Estimand::RefLoss));
    CHECK(ctx.plugin(Estimand::RefLoss) == doctest::Approx(0.0).epsilon(1e-14));
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        CHECK(std::abs(eif_ref(ctx, i)) <= 1e-14);
    }
}

TEST_CASE("perfect x-free predictor zeroes the loco influence") {
    DiscreteJoint d;
    d.dz = 1;
    const FittedLearner g = FittedLearner::linear(0.5, 0.0, {2.0});
    for (int i = 0; i < 4; ++i) {
        const double z = 0.25 * i, x = -z;
        d.support.push_back({x, g.predict(x, {&z, 1}), {z}});
        d.probs.push_back(0.25);
    }
    const FittedLearner f = FittedLearner::linear(0.0, 1.0, {1.0});
    EifContext ctx = make_exact_context(d, f, &g);
    ctx.set_psi_hat(Estimand::LocoLoss, ctx.plugin(Estimand::LocoLoss));
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        CHECK(std::abs(eif_loco(ctx, i)) <= 1e-14);
    }
}

TEST_CASE("separate conditional-mean model shifts the ref influence by the score") {
    Rng rng(3);
    DiscreteJoint d = random_discrete_joint(rng, 8, 2, 1);
    const FittedLearner f = FittedLearner::linear(0.2, 0.9, {0.4});
    const FittedLearner mu = FittedLearner::linear(-0.1, 1.0, {0.6});
    EifContext plain = make_exact_context(d, f);
    EifContext with_mu = make_exact_context(d, f, nullptr, &mu);
    const double psi = plain.plugin(Estimand::RefLoss);
    plain.set_psi_hat(Estimand::RefLoss, psi);
    with_mu.set_psi_hat(Estimand::RefLoss, psi);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const DiscretePoint& a = d.support[i];
        const double fh = f.predict(a.x, a.z);
        const double want = -sq_loss_dyhat(a.y, fh) * (mu.predict(a.x, a.z) - fh);
        CHECK(eif_ref(with_mu, i) - eif_ref(plain, i) ==
              doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("model context enforces its preconditions") {
    Rng rng(8);
    Dataset d = linear_gaussian(120, 0.5, 5.0, 1.0, rng);
    std::vector<std::size_t> rows(d.n());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const FittedLearner f = fit_ridge(d, 1e-6, true);
    const auto px = fit_gaussian_linear(d.x, d.z, d.dz);
    const auto py = fit_gaussian_linear(d.y, d.z, d.dz);

    SUBCASE("m below 2 is rejected") {
        CHECK_THROWS_AS(
            make_model_context(d, rows, f, nullptr, px.get(), py.get(), 1),
            ConfigError);
    }
    SUBCASE("empty evaluation set is rejected") {
        CHECK_THROWS_AS(make_model_context(d, {}, f, nullptr, px.get(), py.get(), 8),
                        DataError);
    }
    SUBCASE("margperm refuses the partition x-conditional") {
        const auto part = fit_partition_density(d.x, d.z, d.dz, 20);
        CHECK_THROWS_WITH_AS(
            make_model_context(d, rows, f, nullptr, part.get(), py.get(), 8, nullptr,
                               /*with_margperm=*/true),
            doctest::Contains("gaussian-linear"), ConfigError);
    }
    SUBCASE("loco influence without the x-free learner is a config error") {
        EifContext ctx = make_model_context(d, rows, f, nullptr, px.get(), py.get(), 8);
        CHECK_THROWS_AS(ctx.eif(Estimand::LocoLoss, 0), ConfigError);
    }
    SUBCASE("condperm influence without the y-conditional is a config error") {
        EifContext ctx = make_model_context(d, rows, f, nullptr, px.get(), nullptr, 8);
        CHECK_THROWS_AS(ctx.eif(Estimand::CondPermLoss, 0), ConfigError);
    }
}

TEST_CASE("condperm plug-in near the population value on the linear-gaussian dgp") {
    // rho = 0.5, beta = 5, unit noise: population condperm loss is
    // 2*beta^2*(1-rho^2)/2 + ... = 50*(1-0.25)/2 + 1 + 25*(1-0.25)/... kept
    // simple: the analytic value of E L(y, f(x', z)) at the true f is 38.5
    Rng rng(20240501);
    Dataset d = linear_gaussian(2000, 0.5, 5.0, 1.0, rng);
    std::vector<std::size_t> rows(d.n());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const FittedLearner f = fit_ridge(d, 1e-6, true);
    const auto px = fit_gaussian_linear(d.x, d.z, d.dz);
    const auto py = fit_gaussian_linear(d.y, d.z, d.dz);
    EifContext ctx = make_model_context(d, rows, f, nullptr, px.get(), py.get(), 256);
    CHECK(ctx.plugin(Estimand::CondPermLoss) == doctest::Approx(38.5).epsilon(3.0 / 38.5));
}

} // TEST_SUITE
