#include <doctest.h>

#include <cmath>

#include "tlvi/data.hpp"
#include "tlvi/errors.hpp"
#include "tlvi/learners.hpp"
#include "tlvi/rng.hpp"

using namespace tlvi;

namespace {

Dataset linear_data(std::size_t n, Rng& rng, double noise = 0.0) {
    // y = 2 + 3x - z1 + 0.5 z2
    Dataset d;
    d.dz = 2;
    d.z_names = {"z1", "z2"};
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal(), z1 = rng.normal(), z2 = rng.normal();
        d.x.push_back(x);
        d.z.push_back(z1);
        d.z.push_back(z2);
        d.y.push_back(2.0 + 3.0 * x - z1 + 0.5 * z2 + noise * rng.normal());
    }
    return d;
}

} // namespace

TEST_SUITE("learners") {

TEST_CASE("ridge recovers an exact linear relationship") {
    Rng rng(1);
    Dataset d = linear_data(60, rng);
    FittedLearner f = fit_ridge(d, 1e-8);
    CHECK(f.kind() == LearnerKind::Ridge);
    CHECK(f.uses_x());
    Rng probe(2);
    for (int i = 0; i < 10; ++i) {
        const double x = probe.normal();
        const double z[2] = {probe.normal(), probe.normal()};
        const double want = 2.0 + 3.0 * x - z[0] + 0.5 * z[1];
        CHECK(f.predict(x, {z, 2}) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("x-free ridge ignores the interest covariate") {
    Rng rng(3);
    Dataset d = linear_data(60, rng, 0.1);
    FittedLearner g = fit_without_x(d, LearnerKind::Ridge);
    CHECK_FALSE(g.uses_x());
    const double z[2] = {0.4, -0.2};
    CHECK(g.predict(-5.0, {z, 2}) == g.predict(5.0, {z, 2}));
}

TEST_CASE("singular unpenalized design is reported, penalty rescues it") {
    // z2 duplicates z1, so the normal equations are rank deficient at
    // penalty zero
    Dataset d;
    d.dz = 2;
    Rng rng(4);
    for (int i = 0; i < 30; ++i) {
        const double x = rng.normal(), z = rng.normal();
        d.x.push_back(x);
        d.z.push_back(z);
        d.z.push_back(z);
        d.y.push_back(x + z + 0.01 * rng.normal());
    }
    CHECK_THROWS_WITH_AS(fit_ridge(d, 0.0), doctest::Contains("penalty"),
                         NumericError);
    CHECK_NOTHROW(fit_ridge(d, 1e-4));
}

TEST_CASE("ridge needs more rows than coefficients") {
    Dataset d;
    d.dz = 2;
    d.y = {1, 2, 3};
    d.x = {0, 1, 2};
    d.z = {1, 0, 0, 1, 1, 1};
    CHECK_THROWS_AS(fit_ridge(d), DataError); // 3 rows, 3 slopes + intercept
}

TEST_CASE("knn with k=1 reproduces training responses") {
    Rng rng(5);
    Dataset d = linear_data(40, rng, 0.3);
    FittedLearner f = fit_knn(d, 1);
    for (std::size_t i = 0; i < d.n(); ++i) {
        CHECK(f.predict(d.x[i], d.z_row(i)) == doctest::Approx(d.y[i]));
    }
}

TEST_CASE("knn tie-break picks lowest training index") {
    // four identical feature rows with distinct responses
    Dataset d;
    d.dz = 1;
    for (int i = 0; i < 4; ++i) {
        d.x.push_back(1.0);
        d.z.push_back(2.0);
        d.y.push_back(double(i));
    }
    FittedLearner f = fit_knn(d, 2);
    const double z = 2.0;
    // neighbours must be rows 0 and 1 -> mean 0.5
    CHECK(f.predict(1.0, {&z, 1}) == doctest::Approx(0.5));
}

TEST_CASE("knn default neighbourhood is sqrt of fold size") {
    Rng rng(6);
    Dataset d = linear_data(26, rng, 0.1);
    FittedLearner f = fit_knn(d); // ceil(sqrt(26)) = 6
    FittedLearner g = fit_knn(d, 6);
    const double z[2] = {0.1, 0.2};
    CHECK(f.predict(0.0, {z, 2}) == g.predict(0.0, {z, 2}));
}

TEST_CASE("knn neighbourhood size is validated") {
    Rng rng(7);
    Dataset d = linear_data(10, rng);
    CHECK_THROWS_AS(fit_knn(d, 11), ConfigError);
}

TEST_CASE("x-free fit without remaining covariates is rejected") {
    Dataset d;
    d.dz = 0;
    d.y = {1, 2, 3, 4};
    d.x = {0, 1, 2, 3};
    CHECK_THROWS_AS(fit_without_x(d, LearnerKind::Ridge), ConfigError);
}

TEST_CASE("linear factory is an exact affine map") {
    FittedLearner f = FittedLearner::linear(1.0, -2.0, {0.5, 3.0});
    const double z[2] = {2.0, -1.0};
    CHECK(f.predict(4.0, {z, 2}) == doctest::Approx(1.0 - 8.0 + 1.0 - 3.0));
}

} // TEST_SUITE
