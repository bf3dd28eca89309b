#include <doctest.h>

#include <cmath>
#include <vector>

#include "flashread/estimation.hpp"
#include "flashread/rng.hpp"
#include "oracles.hpp"

using namespace flashread;

namespace {

VoltageModel fresh() { return VoltageModel::slc(1.0, 0.12, 2.0, 0.22); }
VoltageModel worn() { return VoltageModel::slc(1.0, 0.18, 2.0, 0.32); }

ReadRecord clean_read(const VoltageModel& m, double t) { return {t, cdf_sample(m, t)}; }

Reader clean_reader(const VoltageModel& m) {
    return [m](double t) { return ReadRecord{t, cdf_sample(m, t)}; };
}

}  // namespace

TEST_CASE("estimate_level1 on noiseless fresh-page reads") {
    auto [mu, sigma] = estimate_level1(clean_read(fresh(), 0.8), clean_read(fresh(), 1.1));
    CHECK(mu == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(sigma == doctest::Approx(0.12).epsilon(1e-2));
}

TEST_CASE("estimate_level1 error paths") {
    CHECK_THROWS_AS(estimate_level1({0.8, 0.2}, {1.1, 0.2}), DegenerateReadsError);
    CHECK_THROWS_AS(estimate_level1({0.8, 0.6}, {1.1, 0.7}), OutOfRangeError);
    CHECK_THROWS_AS(estimate_level1({0.8, 0.0}, {1.1, 0.2}), OutOfRangeError);
    CHECK_THROWS_AS(estimate_level1({1.1, 0.2}, {0.8, 0.3}), PreconditionError);
    CHECK_THROWS_AS(estimate_level1({0.8, 0.3}, {1.1, 0.2}), InconsistentReadsError);
}

TEST_CASE("known-mu1 variant reproduces sigma1 on clean data") {
    // Noiseless: replacing the first read by (mu1, 0.25) gives the same sigma.
    KnownParams known;
    known.mu1 = 1.0;
    std::vector<ReadRecord> reads = {clean_read(fresh(), 1.1), clean_read(fresh(), 1.9),
                                     clean_read(fresh(), 2.1)};
    ParameterEstimate est = estimate_from_reads(reads, known);
    CHECK(est.sigma1_hat == doctest::Approx(0.12).epsilon(1e-3));
    CHECK(est.mu1_hat == 1.0);
}

TEST_CASE("estimate_level2 on noiseless fresh-page reads") {
    auto [mu, sigma] =
        estimate_level2(clean_read(fresh(), 1.9), clean_read(fresh(), 2.1), 1.0, 0.12);
    CHECK(mu == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(sigma == doctest::Approx(0.22).epsilon(1e-2));
}

TEST_CASE("estimate_level2 rejects tail reads") {
    // Far-right reads leave no level-2 mass: 2y - q drops out of (0,1).
    CHECK_THROWS_AS(estimate_level2({3.5, 0.4999}, {3.7, 0.4999}, 1.0, 0.12), OutOfRangeError);
}

TEST_CASE("estimate_level2 symmetric-model check") {
    VoltageModel m = VoltageModel::slc(1.0, 0.2, 2.0, 0.2);
    auto [mu, sigma] = estimate_level2(clean_read(m, 1.8), clean_read(m, 2.2), 1.0, 0.2);
    CHECK(sigma == doctest::Approx(0.2).epsilon(1e-3));
    CHECK(mu == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("estimate_t_star") {
    CHECK(estimate_t_star(1.0, 0.12, 2.0, 0.22) == doctest::Approx(1.37).epsilon(0.02 / 1.37));
    CHECK(estimate_t_star(1.0, 0.2, 2.0, 0.2) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(estimate_t_star(1.0, 0.12, 2.0, 0.22) ==
          doctest::Approx(optimal_threshold(fresh())).epsilon(1e-12));
    CHECK_THROWS_AS(estimate_t_star(2.0, 0.1, 1.0, 0.1), InconsistentReadsError);
    CHECK_THROWS_AS(estimate_t_star(1.0, -0.1, 2.0, 0.1), InconsistentReadsError);
}

TEST_CASE("progressive_read: noiseless fresh page recovers the truth") {
    int count = 0;
    Reader reader = [&](double t) {
        ++count;
        return clean_read(fresh(), t);
    };
    ProgressiveResult res = progressive_read(reader);
    CHECK(count == 4);
    CHECK(res.reads.size() == 4);
    CHECK(res.estimate.mu1_hat == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(res.estimate.sigma1_hat == doctest::Approx(0.12).epsilon(1e-2));
    CHECK(res.estimate.mu2_hat == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(res.estimate.sigma2_hat == doctest::Approx(0.22).epsilon(1e-2));
    CHECK(std::abs(res.estimate.t_star_hat - oracles::grid_search_t_star(1.0, 0.12, 2.0, 0.22)) <
          1e-2);
}

TEST_CASE("progressive_read: reduced read counts with known parameters") {
    int count = 0;
    Reader reader = [&](double t) {
        ++count;
        return clean_read(worn(), t);
    };

    AdaptivePlan plan;
    plan.known.sigma1 = 0.18;
    ProgressiveResult res = progressive_read(reader, plan);
    CHECK(count == 3);
    CHECK(res.estimate.mu1_hat == doctest::Approx(1.0).epsilon(2e-3));

    count = 0;
    AdaptivePlan plan2;
    plan2.known.mu1 = 1.0;
    plan2.known.sigma1 = 0.18;
    res = progressive_read(reader, plan2);
    CHECK(count == 2);
    CHECK(res.estimate.mu2_hat == doctest::Approx(2.0).epsilon(5e-3));
    CHECK(res.estimate.sigma2_hat == doctest::Approx(0.32).epsilon(5e-2));
}

TEST_CASE("progressive_read: window too small fails with partial reads") {
    AdaptivePlan plan;
    plan.window_lo = 1.4;
    plan.window_hi = 1.6;
    try {
        progressive_read(clean_reader(fresh()), plan);
        FAIL("expected EstimationFailedError");
    } catch (const EstimationFailedError& e) {
        CHECK(e.partial_reads.size() >= 1);
    }
}

TEST_CASE("progressive_read roundtrip over randomized models") {
    // Models drawn wide enough apart that the level-1 reads carry negligible
    // level-2 mass (the isolation precondition of the inversion equations).
    Rng rng(19);
    for (int i = 0; i < 100; ++i) {
        const double mu1 = rng.uniform(0.8, 1.2);
        const double mu2 = mu1 + rng.uniform(1.3, 1.8);
        const double s1 = rng.uniform(0.08, 0.15);
        const double s2 = rng.uniform(0.1, 0.2);
        VoltageModel m = VoltageModel::slc(mu1, s1, mu2, s2);
        AdaptivePlan plan;
        plan.window_hi = 3.6;
        plan.mu1_guess = mu1 + rng.uniform(-0.05, 0.05);
        plan.mu2_guess = mu2 + rng.uniform(-0.05, 0.05);
        plan.sigma1_guess = s1;
        plan.sigma2_guess = s2;
        ProgressiveResult res = progressive_read(clean_reader(m), plan);
        CHECK(std::abs(res.estimate.mu1_hat - mu1) / mu1 < 1e-6);
        CHECK(std::abs(res.estimate.sigma1_hat - s1) / s1 < 1e-6);
        CHECK(std::abs(res.estimate.mu2_hat - mu2) / mu2 < 1e-6);
        CHECK(std::abs(res.estimate.sigma2_hat - s2) / s2 < 1e-6);
    }
}

TEST_CASE("progressive_read under read noise: worn-page medians") {
    const int trials = 5000;
    std::vector<double> mu_err, sg_err;
    ReadNoiseModel noise = ReadNoiseModel::uniform(-0.02, 0.02);
    VoltageModel m = worn();
    int failures = 0;
    for (int i = 0; i < trials; ++i) {
        Rng rng(derive_seed(123, i));
        try {
            ProgressiveResult res =
                progressive_read([&](double t) { return read(m, t, noise, rng); });
            mu_err.push_back(
                0.5 * (std::abs(res.estimate.mu1_hat - 1.0) + std::abs(res.estimate.mu2_hat - 2.0) / 2.0));
            sg_err.push_back(0.5 * (std::abs(res.estimate.sigma1_hat - 0.18) / 0.18 +
                                    std::abs(res.estimate.sigma2_hat - 0.32) / 0.32));
        } catch (const Error&) {
            ++failures;
            mu_err.push_back(1e9);
            sg_err.push_back(1e9);
        }
    }
    std::sort(mu_err.begin(), mu_err.end());
    std::sort(sg_err.begin(), sg_err.end());
    CHECK(mu_err[trials / 2] <= 0.03);
    CHECK(sg_err[trials / 2] <= 0.15);
    CHECK(failures < trials / 10);
}

TEST_CASE("first_order_errors") {
    FirstOrderErrors z = first_order_errors(fresh(), 0.9, 1.1, 0.0, 0.0);
    CHECK(z.n1 == 0.0);
    CHECK(z.n2 == 0.0);
    CHECK(z.sigma1_sensitivity == 0.0);
    CHECK(z.mu1_sensitivity == 0.0);

    // At t1 = mu1 the exponential factor is 1.
    FirstOrderErrors at_mean = first_order_errors(fresh(), 1.0, 1.1, 1e-4, 0.0);
    CHECK(at_mean.n1 == doctest::Approx(2.0 * std::sqrt(2.0 * 3.14159265358979) * 1e-4)
                            .epsilon(1e-9));

    // Predicted shifts track the actual estimator response to first order.
    // The baseline is the estimator's own noiseless output, which cancels the
    // (tiny, systematic) level-2 contamination of the clean reads.
    const double ny1 = 1e-4, ny2 = -1e-4;
    auto [mu_base, sigma_base] =
        estimate_level1({0.9, cdf_sample(fresh(), 0.9)}, {1.1, cdf_sample(fresh(), 1.1)});
    auto [mu_noisy, sigma_noisy] = estimate_level1({0.9, cdf_sample(fresh(), 0.9) + ny1},
                                                   {1.1, cdf_sample(fresh(), 1.1) + ny2});
    FirstOrderErrors pred = first_order_errors(fresh(), 0.9, 1.1, ny1, ny2);
    const double actual_sigma_shift = sigma_noisy - sigma_base;
    CHECK(std::abs(pred.sigma1_sensitivity - actual_sigma_shift) <
          0.05 * std::abs(actual_sigma_shift));

    // Asymmetric noise so the first-order mean term is nonzero.
    auto [mu_noisy2, sigma_noisy2] = estimate_level1(
        {0.9, cdf_sample(fresh(), 0.9) + 1e-4}, {1.1, cdf_sample(fresh(), 1.1) + 4e-5});
    FirstOrderErrors pred2 = first_order_errors(fresh(), 0.9, 1.1, 1e-4, 4e-5);
    const double actual_mu_shift = mu_noisy2 - mu_base;
    CHECK(std::abs(pred2.mu1_sensitivity - actual_mu_shift) <
          0.05 * std::abs(actual_mu_shift));
    (void)sigma_noisy2;
    (void)mu_noisy;
}

TEST_CASE("laplace_estimate_level1") {
    // Single isolated Laplace level: y = F(t)/2.
    auto lap_cdf = [](double mu, double b, double t) {
        double z = (t - mu) / b;
        return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
    };
    ReadRecord r1{1.05, 0.5 * lap_cdf(1.0, 0.1, 1.05)};
    ReadRecord r2{1.2, 0.5 * lap_cdf(1.0, 0.1, 1.2)};
    auto [mu, b] = laplace_estimate_level1(r1, r2);
    CHECK(b == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(mu == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(laplace_estimate_level1({1.05, 0.2}, {1.2, 0.2}), DegenerateReadsError);
    CHECK_THROWS_AS(laplace_estimate_level1({1.05, 0.6}, {1.2, 0.7}), OutOfRangeError);
}

TEST_CASE("estimate_from_reads validates the read count") {
    std::vector<ReadRecord> three = {clean_read(fresh(), 0.8), clean_read(fresh(), 1.1),
                                     clean_read(fresh(), 1.9)};
    CHECK_THROWS_AS(estimate_from_reads(three, {}), PreconditionError);
}
