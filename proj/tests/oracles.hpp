// Independent reference computations used by the tests. Everything here is
// deliberately brute-force and kept apart from the library implementation.
#pragma once

#include <vector>

#include "flashread/channel.hpp"
#include "flashread/policy.hpp"

namespace flashread::oracles {

// Upper-tail normal probability by adaptive Simpson integration of the
// density; independent of the erfc-based implementation.
double q_integral(double x);

// Inverse of q_func by plain bisection.
double q_inv_bisect(double y);

// BER-minimizing threshold by dense grid search over the closed-form BER.
double grid_search_t_star(double mu1, double s1, double mu2, double s2, double step = 1e-4);

// BER evaluated directly from erfc (no library calls).
double ber_direct(double mu1, double s1, double mu2, double s2, double t);

double binary_entropy_bits(double p);

// Binomial pmf by multiplicative accumulation (small N only).
double binom_pmf_direct(long long n, long long k, double p);
double binom_upper_tail_direct(long long n, double p, long long alpha);

// Exhaustive finite-horizon optimization of the discretized read process by
// forward enumeration: every observation branch recurses into a fresh
// posterior with no pruning and no state tables. Terminal rewards come from
// the public expected_reward/bayes_update operations.
struct ExhaustiveDpResult {
    int best_first_action = -1;
    double value = 0.0;
    // Optimal second-read action per first observation bin (horizon 2).
    std::vector<std::pair<int, int>> second_actions;  // (y_bin, action)
};

ExhaustiveDpResult exhaustive_dp(const PriorGrid& prior, const std::vector<double>& thresholds,
                                 const DpConfig& config);

}  // namespace flashread::oracles
