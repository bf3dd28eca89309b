#include <doctest.h>

#include <cmath>
#include <vector>

#include "flashread/infotheory.hpp"
#include "flashread/rng.hpp"
#include "oracles.hpp"

using namespace flashread;

namespace {

TransitionMatrix matrix(std::vector<double> row1, std::vector<double> row2,
                        std::vector<double> thresholds = {}) {
    TransitionMatrix tm;
    if (thresholds.empty()) {
        for (std::size_t i = 0; i + 1 < row1.size(); ++i) {
            thresholds.push_back(static_cast<double>(i));
        }
    }
    tm.thresholds = std::move(thresholds);
    tm.p[0] = std::move(row1);
    tm.p[1] = std::move(row2);
    return tm;
}

VoltageModel fresh() { return VoltageModel::slc(1.0, 0.12, 2.0, 0.22); }

TransitionMatrix random_channel(Rng& rng, int m) {
    std::vector<double> p1(m), p2(m);
    double s1 = 0, s2 = 0;
    for (int j = 0; j < m; ++j) {
        p1[j] = rng.uniform(0.05, 1.0);
        p2[j] = rng.uniform(0.05, 1.0);
        s1 += p1[j];
        s2 += p2[j];
    }
    for (int j = 0; j < m; ++j) {
        p1[j] /= s1;
        p2[j] /= s2;
    }
    return matrix(std::move(p1), std::move(p2));
}

// Estimate sharing P's column marginals: mass is transferred between the rows
// column by column with the transfers summing to zero.
TransitionMatrix perturb_matched(Rng& rng, const TransitionMatrix& P) {
    const int m = static_cast<int>(P.num_intervals());
    std::vector<double> d(m), room(m);
    double mean = 0.0;
    for (int j = 0; j < m; ++j) {
        room[j] = std::min(P.p[0][j], P.p[1][j]) - 1e-4;
        d[j] = rng.uniform(-0.5 * room[j], 0.5 * room[j]);
        mean += d[j] / m;
    }
    double scale = 1.0;
    for (int j = 0; j < m; ++j) {
        d[j] -= mean;
        if (std::abs(d[j]) > room[j]) scale = std::min(scale, room[j] / std::abs(d[j]));
    }
    TransitionMatrix Q = P;
    for (int j = 0; j < m; ++j) {
        Q.p[0][j] = P.p[0][j] + scale * d[j];
        Q.p[1][j] = P.p[1][j] - scale * d[j];
    }
    return Q;
}

std::pair<TransitionMatrix, TransitionMatrix> random_marginal_pair(Rng& rng, int m) {
    TransitionMatrix P = random_channel(rng, m);
    TransitionMatrix Q = perturb_matched(rng, P);
    return {P, Q};
}

}  // namespace

TEST_CASE("mutual_information basics") {
    CHECK(mutual_information(matrix({0.3, 0.7}, {0.3, 0.7})) == doctest::Approx(0.0));
    CHECK(mutual_information(matrix({1.0, 0.0}, {0.0, 1.0})) == doctest::Approx(1.0));
    CHECK(mutual_information(matrix({0.9, 0.1}, {0.1, 0.9})) ==
          doctest::Approx(1.0 - oracles::binary_entropy_bits(0.1)).epsilon(1e-9));
    CHECK(mutual_information(matrix({0.9, 0.1}, {0.1, 0.9})) ==
          doctest::Approx(0.5310).epsilon(1e-3));
}

TEST_CASE("mutual information bounds and refinement monotonicity") {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        const double mu1 = rng.uniform(0.6, 1.2);
        const double mu2 = mu1 + rng.uniform(0.5, 1.1);
        VoltageModel m = VoltageModel::slc(mu1, rng.uniform(0.08, 0.3), mu2,
                                           rng.uniform(0.08, 0.35));
        std::vector<double> ts;
        const int count = 1 + static_cast<int>(rng.below(4));
        for (int k = 0; k < count; ++k) ts.push_back(rng.uniform(mu1 - 0.3, mu2 + 0.3));
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

        const double i_coarse = mutual_information(transition_matrix(m, ts));
        CHECK(i_coarse >= 0.0);
        CHECK(i_coarse <= 1.0);

        // Adding a threshold never loses information.
        std::vector<double> finer = ts;
        finer.push_back(rng.uniform(mu1 - 0.3, mu2 + 0.3));
        std::sort(finer.begin(), finer.end());
        finer.erase(std::unique(finer.begin(), finer.end()), finer.end());
        if (finer.size() > ts.size()) {
            CHECK(mutual_information(transition_matrix(m, finer)) >= i_coarse - 1e-12);
        }
    }
}

TEST_CASE("mismatched_bound: matched case and KL decomposition") {
    std::vector<double> ts{1.2, 1.35, 1.45, 1.6};
    TransitionMatrix P = transition_matrix(fresh(), ts);
    CHECK(mismatched_bound(P, P) == doctest::Approx(mutual_information(P)).epsilon(1e-12));

    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        auto [A, B] = random_marginal_pair(rng, 2 + static_cast<int>(rng.below(4)));
        const double c = mismatched_bound(A, B);
        const double want = mutual_information(A) - kl_divergence(A, B);
        CHECK(c == doctest::Approx(want).epsilon(1e-9));
        CHECK(c <= mutual_information(A) + 1e-9);
    }
}

TEST_CASE("kl_divergence basics") {
    TransitionMatrix P = matrix({0.7, 0.3}, {0.3, 0.7});
    TransitionMatrix Q = matrix({0.8, 0.2}, {0.2, 0.8});
    CHECK(kl_divergence(P, P) == doctest::Approx(0.0));
    CHECK(kl_divergence(P, Q) == doctest::Approx(0.0411).epsilon(0.025));

    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        auto [A, B] = random_marginal_pair(rng, 2 + static_cast<int>(rng.below(4)));
        CHECK(kl_divergence(A, B) >= -1e-12);
    }
}

TEST_CASE("support mismatch raises") {
    TransitionMatrix P = matrix({0.7, 0.3}, {0.3, 0.7});
    TransitionMatrix Q = matrix({1.0, 0.0}, {0.0, 1.0});
    CHECK_THROWS_AS(mismatched_bound(P, Q), SupportMismatchError);
    CHECK_THROWS_AS(kl_divergence(P, Q), SupportMismatchError);
}

TEST_CASE("concavity spot check in the estimated probabilities") {
    // With the channel P fixed and column marginals matched, the bound is
    // I(P) - D(P||P_hat) and the KL term is convex in P_hat, so the bound is
    // concave in the estimate. (It is not jointly concave in (P, P_hat): the
    // mutual information is convex, not concave, in the channel.)
    Rng rng(123);
    auto mix = [](const TransitionMatrix& X, const TransitionMatrix& Y) {
        TransitionMatrix M = X;
        for (int r = 0; r < 2; ++r) {
            for (std::size_t j = 0; j < M.p[r].size(); ++j) {
                M.p[r][j] = 0.5 * (X.p[r][j] + Y.p[r][j]);
            }
        }
        return M;
    };
    for (int i = 0; i < 100; ++i) {
        TransitionMatrix P = random_channel(rng, 3);
        TransitionMatrix Ahat = perturb_matched(rng, P);
        TransitionMatrix Bhat = perturb_matched(rng, P);
        const double mid = mismatched_bound(P, mix(Ahat, Bhat));
        const double avg = 0.5 * mismatched_bound(P, Ahat) + 0.5 * mismatched_bound(P, Bhat);
        CHECK(mid >= avg - 1e-9);
    }
}

TEST_CASE("llr_table") {
    TransitionMatrix even = matrix({0.5, 0.5}, {0.5, 0.5});
    LLRTable t = llr_table(even);
    CHECK(t.llr[0] == doctest::Approx(0.0));

    // Single threshold at the median: interval 0 favors level 1.
    const double tm = t_median(fresh());
    LLRTable single = llr_table(transition_matrix(fresh(), std::vector<double>{tm}));
    CHECK(single.llr[0] > 0.0);
    CHECK(single.llr[1] < 0.0);

    // Middle intervals of the uncertainty-region set are least informative.
    std::vector<double> ts{1.2, 1.35, 1.45, 1.6};
    LLRTable fine = llr_table(transition_matrix(fresh(), ts));
    CHECK(fine.llr.size() == 5);
    for (std::size_t j = 1; j + 1 < fine.llr.size(); ++j) {
        CHECK(std::abs(fine.llr[j]) <
              std::max(std::abs(fine.llr.front()), std::abs(fine.llr.back())));
    }

    // Zero-probability rows clamp at +-LLR_MAX.
    TransitionMatrix clamped = matrix({0.5, 0.5, 0.0}, {0.0, 0.5, 0.5});
    LLRTable ct = llr_table(clamped);
    CHECK(ct.llr[0] == kLlrMax);
    CHECK(ct.llr[2] == -kLlrMax);

    TransitionMatrix bad = matrix({0.5, 0.5, 0.0}, {0.5, 0.5, 0.0});
    CHECK_THROWS_AS(llr_table(bad), EmptyIntervalError);
}
