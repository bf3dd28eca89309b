#include <doctest.h>

#include <cmath>

#include "flashread/errordist.hpp"
#include "oracles.hpp"

using namespace flashread;

TEST_CASE("error_count_pmf") {
    CHECK(error_count_pmf({100, 0.0, 0}, 0) == 1.0);
    CHECK(error_count_pmf({10, 0.5, 0}, 5) == doctest::Approx(0.24609).epsilon(1e-5));
    CHECK(error_count_pmf({10, 0.5, 0}, 5) ==
          doctest::Approx(oracles::binom_pmf_direct(10, 5, 0.5)).epsilon(1e-12));

    double sum = 0.0;
    for (long long k = 0; k <= 2048; ++k) sum += error_count_pmf({2048, 0.01, 0}, k);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS(error_count_pmf({10, 0.5, 0}, 11), PreconditionError);
    CHECK_THROWS_AS(error_count_pmf({10, 0.5, 0}, -1), PreconditionError);
}

TEST_CASE("failure_rate reproduces the published grid") {
    // N = 2048 BCH-style decoder, gaussian tail approximation.
    const struct {
        long long alpha;
        double p_e;
        double expected;
    } cells[] = {
        {23, 0.008, 0.05},  {23, 0.01, 0.28},  {23, 0.012, 0.62},
        {25, 0.008, 0.016}, {25, 0.01, 0.15},  {25, 0.012, 0.46},
        {27, 0.008, 0.004}, {27, 0.01, 0.07},  {27, 0.012, 0.31},
    };
    for (const auto& c : cells) {
        const double got = failure_rate({2048, c.p_e, c.alpha}, TailApprox::gaussian);
        CHECK(std::abs(got - c.expected) <= 0.01);
    }
}

TEST_CASE("exact tail matches the direct summation oracle") {
    for (double p : {0.004, 0.008, 0.012}) {
        for (long long alpha : {15, 23, 31}) {
            const double got = failure_rate({2048, p, alpha}, TailApprox::exact);
            const double want = oracles::binom_upper_tail_direct(2048, p, alpha);
            CHECK(got == doctest::Approx(want).epsilon(1e-9));
        }
    }
    // Large N stays stable in log space.
    const double big = failure_rate({100000, 0.001, 120}, TailApprox::exact);
    CHECK(big > 0.0);
    CHECK(big < 0.05);
}

TEST_CASE("approximation modes agree in the bulk") {
    // Poisson tracks the exact binomial tail over the whole Np_e range. The
    // gaussian tail is used without a continuity correction (the published
    // grid requires it that way), which costs up to ~pmf(alpha)/2 near the
    // mean: ~0.04 at Np_e = 16..30. Outside one sigma it tightens to 0.02.
    const long long n = 2048;
    for (double np : {5.0, 10.0, 16.0, 20.0, 25.0, 30.0}) {
        const double p = np / n;
        const double sd = std::sqrt(np * (1.0 - p));
        for (int s = -3; s <= 3; ++s) {
            const long long alpha = static_cast<long long>(std::llround(np + s * sd));
            if (alpha < 0) continue;
            CodewordErrorModel m{n, p, alpha};
            const double po = failure_rate(m, TailApprox::poisson);
            const double ex = failure_rate(m, TailApprox::exact);
            CHECK(std::abs(po - ex) < 0.02);
            if (np >= 16.0) {
                const double g = failure_rate(m, TailApprox::gaussian);
                CHECK(std::abs(g - ex) < (std::abs(s) >= 2 ? 0.02 : 0.07));
            }
        }
    }
}

TEST_CASE("failure_rate monotonicity") {
    for (auto mode : {TailApprox::gaussian, TailApprox::poisson, TailApprox::exact}) {
        double prev = 1.0;
        for (long long alpha = 10; alpha <= 40; ++alpha) {
            const double f = failure_rate({2048, 0.01, alpha}, mode);
            CHECK(f <= prev + 1e-12);
            prev = f;
        }
        prev = 0.0;
        for (double p = 0.004; p <= 0.02; p += 0.002) {
            const double f = failure_rate({2048, p, 25}, mode);
            CHECK(f >= prev - 1e-12);
            prev = f;
        }
    }
}
