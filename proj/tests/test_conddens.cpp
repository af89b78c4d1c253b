#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tlvi/conddens.hpp"
#include "tlvi/errors.hpp"
#include "tlvi/rng.hpp"

using namespace tlvi;

TEST_SUITE("conddens") {

TEST_CASE("constant z collapses the partition to a single leaf") {
    Rng rng(1);
    std::vector<double> v(80), z(80, 1.0);
    for (double& a : v) a = rng.normal();
    auto m = fit_partition_density(v, z, 1, 20);
    CHECK(m->kind() == DensityKind::Partition);
    CHECK(m->leaf_sizes() == std::vector<std::size_t>{80});

    // sampling reproduces the marginal: every draw is a training value
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    Rng draw(2);
    const double zq = 1.0;
    for (int i = 0; i < 50; ++i) {
        const double s = m->sample({&zq, 1}, draw);
        CHECK(std::binary_search(sorted.begin(), sorted.end(), s));
    }
}

TEST_CASE("partition separates a step function and routes draws correctly") {
    Rng rng(3);
    const std::size_t n = 200;
    std::vector<double> v(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = rng.normal();
        v[i] = (z[i] < 0.0 ? 0.0 : 10.0) + 0.1 * rng.normal();
    }
    auto m = fit_partition_density(v, z, 1, 20);
    const auto sizes = m->leaf_sizes();
    CHECK(sizes.size() >= 2);
    CHECK(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) == n);
    for (std::size_t s : sizes) CHECK(s >= 20);

    Rng draw(4);
    const double lo = -1.5, hi = 1.5;
    for (int i = 0; i < 40; ++i) {
        CHECK(m->sample({&lo, 1}, draw) < 5.0);
        CHECK(m->sample({&hi, 1}, draw) > 5.0);
    }
    CHECK(m->cond_mean({&lo, 1}) == doctest::Approx(0.0).epsilon(0.5));
    CHECK(m->cond_mean({&hi, 1}) == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("partition support points are the leaf values or its quantiles") {
    Rng rng(5);
    const std::size_t n = 64;
    std::vector<double> v(n), z(n, 0.0);
    for (double& a : v) a = rng.normal();
    auto m = fit_partition_density(v, z, 1, 20);
    const double zq = 0.0;

    WeightedValues all = m->support_points({&zq, 1}, 100);
    REQUIRE(all.size() == n);
    CHECK(std::accumulate(all.weight.begin(), all.weight.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-12));

    WeightedValues few = m->support_points({&zq, 1}, 9);
    REQUIRE(few.size() == 9);
    CHECK(std::is_sorted(few.value.begin(), few.value.end()));
    CHECK(std::accumulate(few.weight.begin(), few.weight.end(), 0.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("partition density is a nonnegative histogram") {
    Rng rng(6);
    std::vector<double> v(100), z(100, 0.0);
    for (double& a : v) a = rng.normal();
    auto m = fit_partition_density(v, z, 1, 20);
    const double zq = 0.0;
    CHECK(m->density(v[0], {&zq, 1}) > 0.0);
    CHECK(m->density(1e9, {&zq, 1}) == 0.0);
}

TEST_CASE("partition preconditions") {
    std::vector<double> v(30, 1.0), z(30, 0.0);
    CHECK_THROWS_AS(fit_partition_density(v, z, 1, 0), ConfigError);
    CHECK_THROWS_AS(fit_partition_density(v, z, 1, 16), DataError); // 30 < 32
}

TEST_CASE("gaussian-linear recovers a conditional normal") {
    Rng rng(7);
    const std::size_t n = 600;
    std::vector<double> v(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = rng.normal();
        v[i] = 1.0 + 2.0 * z[i] + 0.5 * rng.normal();
    }
    auto m = fit_gaussian_linear(v, z, 1);
    CHECK(m->kind() == DensityKind::GaussianLinear);
    CHECK_FALSE(m->degenerate());
    const double zq = 0.7;
    CHECK(m->cond_mean({&zq, 1}) == doctest::Approx(1.0 + 1.4).epsilon(0.08));

    WeightedValues s = m->support_points({&zq, 1}, 16);
    REQUIRE(s.size() == 16);
    double wsum = 0.0, mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        wsum += s.weight[i];
        mean += s.weight[i] * s.value[i];
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        var += s.weight[i] * (s.value[i] - mean) * (s.value[i] - mean);
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mean == doctest::Approx(m->cond_mean({&zq, 1})).epsilon(1e-10));
    CHECK(std::sqrt(var) == doctest::Approx(0.5).epsilon(0.15));

    // density integrates the right mass around the mean: value at the mean
    // of a sigma-sd normal is 1/(sigma*sqrt(2pi))
    const double at_mean = m->density(m->cond_mean({&zq, 1}), {&zq, 1});
    CHECK(at_mean == doctest::Approx(1.0 / (std::sqrt(var) * 2.5066282746310002))
                         .epsilon(0.05));
}

TEST_CASE("gaussian-linear flags a degenerate residual") {
    std::vector<double> v(50), z(50);
    for (int i = 0; i < 50; ++i) {
        z[i] = i * 0.1;
        v[i] = 3.0 * z[i]; // exact fit, zero residual
    }
    auto m = fit_gaussian_linear(v, z, 1);
    CHECK(m->degenerate());
}

TEST_CASE("gaussian-linear preconditions") {
    std::vector<double> v = {1.0, 2.0}, z = {0.0, 1.0};
    CHECK_THROWS_AS(fit_gaussian_linear(v, z, 1), DataError);
    std::vector<double> vc(40, 1.0), zc(40, 2.0); // constant design column
    CHECK_THROWS_WITH_AS(fit_gaussian_linear(vc, zc, 1),
                         doctest::Contains("singular"), NumericError);
}

TEST_CASE("hermite rule hits normal moments") {
    for (std::size_t m : {2, 3, 8, 31}) {
        const WeightedValues& q = gauss_hermite_normal(m);
        REQUIRE(q.size() == m);
        double w = 0.0, m1 = 0.0, m2 = 0.0, m4 = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            w += q.weight[i];
            m1 += q.weight[i] * q.value[i];
            m2 += q.weight[i] * q.value[i] * q.value[i];
            m4 += q.weight[i] * std::pow(q.value[i], 4);
        }
        CHECK(w == doctest::Approx(1.0).epsilon(1e-13));
        CHECK(std::abs(m1) <= 1e-13);
        CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
        if (m >= 3) CHECK(m4 == doctest::Approx(3.0).epsilon(1e-10));
    }
    const WeightedValues& one = gauss_hermite_normal(1);
    CHECK(one.value[0] == 0.0);
    CHECK(one.weight[0] == 1.0);
}

} // TEST_SUITE
