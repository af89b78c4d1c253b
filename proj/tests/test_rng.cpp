#include <doctest.h>

#include <cmath>
#include <set>

#include "tlvi/rng.hpp"

using namespace tlvi;

TEST_SUITE("rng") {

TEST_CASE("streams are reproducible per seed and distinct across seeds") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("splitmix64 is a deterministic scrambler") {
    CHECK(splitmix64(1) == splitmix64(1));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 100; ++s) seen.insert(splitmix64(s));
    CHECK(seen.size() == 100);
}

TEST_CASE("uniform draws live in the half-open unit interval") {
    Rng rng(7);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("normal draws match the first two moments") {
    Rng rng(123);
    const int n = 40000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        s1 += v;
        s2 += v * v;
    }
    const double mean = s1 / n;
    CHECK(std::abs(mean) <= 0.02);
    CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("bounded draws cover every residue without bias") {
    Rng rng(9);
    int hits[7] = {0};
    for (int i = 0; i < 7000; ++i) {
        const std::uint64_t v = rng.below(7);
        REQUIRE(v < 7);
        ++hits[v];
    }
    for (int h : hits) CHECK(h > 800);
    CHECK(Rng(1).below(1) == 0);
}

} // TEST_SUITE
