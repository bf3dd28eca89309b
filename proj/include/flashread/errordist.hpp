#pragma once

#include "flashread/errors.hpp"

namespace flashread {

// Per-codeword error-count model: N independent bits flipping with
// probability p_e, hard decoder correcting up to alpha of them.
struct CodewordErrorModel {
    long long N = 0;
    double p_e = 0.0;
    long long alpha = 0;
};

enum class TailApprox { gaussian, poisson, exact };

// Exact binomial pmf P(K = k), evaluated in log space.
double error_count_pmf(const CodewordErrorModel& m, long long k);

// Probability the decoder fails, P(K > alpha), under the chosen tail model.
double failure_rate(const CodewordErrorModel& m, TailApprox approx);

}  // namespace flashread
