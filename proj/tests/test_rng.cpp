#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cbrl/rng.hpp"

using namespace cbrl;

TEST_CASE("same seed reproduces the stream, different seeds diverge") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        double ua = a.uniform01(), ub = b.uniform01(), uc = c.uniform01();
        all_equal = all_equal && (ua == ub);
        any_diff = any_diff || (ua != uc);
        CHECK(ua >= 0.0);
        CHECK(ua < 1.0);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("split substreams depend only on (seed, index)") {
    Rng parent1(7), parent2(7);
    Rng s0 = parent1.split(0);
    Rng s0b = parent2.split(0);
    Rng s1 = parent2.split(1);
    bool same = true, diff = false;
    for (int i = 0; i < 32; ++i) {
        double u = s0.uniform01();
        same = same && (u == s0b.uniform01());
        diff = diff || (u != s1.uniform01());
    }
    CHECK(same);
    CHECK(diff);
    // splitting must not perturb the parent relative to an unsplit twin
    Rng p(7);
    (void)p.split(5);
    Rng q(7);
    CHECK(p.uniform01() == q.uniform01());
}

TEST_CASE("geometric with gamma=0.9 has mean 9 and P(T=0)=0.1") {
    Rng rng(123);
    const long n = 400000;
    double sum = 0.0;
    long zeros = 0;
    for (long i = 0; i < n; ++i) {
        long t = rng.geometric_gamma(0.9);
        REQUIRE(t >= 0);
        sum += double(t);
        if (t == 0) ++zeros;
    }
    // mean gamma/(1-gamma) = 9, sd sqrt(gamma)/(1-gamma) ~ 9.49
    CHECK(std::abs(sum / n - 9.0) < 0.1);
    CHECK(std::abs(double(zeros) / n - 0.1) < 0.005);
    // degenerate edge: gamma <= 0 always yields 0
    CHECK(rng.geometric_gamma(0.0) == 0);
}

TEST_CASE("categorical matches probabilities") {
    Rng rng(5);
    std::vector<double> p = {0.5, 0.2, 0.25, 0.05};
    std::vector<long> counts(4, 0);
    const long n = 200000;
    for (long i = 0; i < n; ++i) ++counts[rng.categorical(p)];
    for (int i = 0; i < 4; ++i) CHECK(std::abs(double(counts[i]) / n - p[i]) < 0.01);
    // zero-probability entries are never drawn
    std::vector<double> pz = {0.0, 1.0, 0.0};
    for (int i = 0; i < 1000; ++i) CHECK(rng.categorical(pz) == 1);
}

TEST_CASE("normal moments") {
    Rng rng(11);
    const long n = 200000;
    double s1 = 0.0, s2 = 0.0;
    for (long i = 0; i < n; ++i) {
        double z = rng.normal();
        s1 += z;
        s2 += z * z;
    }
    CHECK(std::abs(s1 / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}
