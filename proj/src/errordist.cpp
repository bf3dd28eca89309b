#include "flashread/errordist.hpp"

#include <cmath>
#include <string>

#include "flashread/numerics.hpp"

namespace flashread {

namespace {

void validate(const CodewordErrorModel& m) {
    if (m.N < 1) throw PreconditionError("CodewordErrorModel: N >= 1 required");
    if (!(m.p_e >= 0.0 && m.p_e <= 1.0)) {
        throw PreconditionError("CodewordErrorModel: p_e must lie in [0,1]");
    }
    if (m.alpha < 0) throw PreconditionError("CodewordErrorModel: alpha >= 0 required");
}

double log_binom_pmf(long long n, long long k, double p) {
    if (p == 0.0) return k == 0 ? 0.0 : -INFINITY;
    if (p == 1.0) return k == n ? 0.0 : -INFINITY;
    double lc = std::lgamma(static_cast<double>(n) + 1.0) -
                std::lgamma(static_cast<double>(k) + 1.0) -
                std::lgamma(static_cast<double>(n - k) + 1.0);
    return lc + static_cast<double>(k) * std::log(p) +
           static_cast<double>(n - k) * std::log1p(-p);
}

// Upper tail P(K > alpha) of Binomial(N, p) by summing the smaller side in
// log space; stable up to N ~ 1e5 and beyond.
double binomial_upper_tail(long long n, double p, long long alpha) {
    if (alpha < 0) return 1.0;
    if (alpha >= n) return 0.0;
    const double mean = static_cast<double>(n) * p;
    const bool sum_upper = static_cast<double>(alpha) >= mean;
    long long lo, hi;
    if (sum_upper) {
        lo = alpha + 1;
        hi = n;
    } else {
        lo = 0;
        hi = alpha;
    }
    // log-sum-exp over the chosen side, accumulated from its largest term.
    double max_log = -INFINITY;
    for (long long k = lo; k <= hi; ++k) {
        max_log = std::max(max_log, log_binom_pmf(n, k, p));
    }
    if (max_log == -INFINITY) return sum_upper ? 0.0 : 1.0;
    double acc = 0.0;
    for (long long k = lo; k <= hi; ++k) {
        acc += std::exp(log_binom_pmf(n, k, p) - max_log);
    }
    double tail = std::exp(max_log) * acc;
    return sum_upper ? std::min(tail, 1.0) : std::max(0.0, 1.0 - tail);
}

// Upper tail P(K > alpha) of Poisson(lambda).
double poisson_upper_tail(double lambda, long long alpha) {
    if (lambda == 0.0) return 0.0;
    double log_term = -lambda;  // log P(K = 0)
    double cdf = std::exp(log_term);
    for (long long k = 1; k <= alpha; ++k) {
        log_term += std::log(lambda) - std::log(static_cast<double>(k));
        cdf += std::exp(log_term);
    }
    return std::max(0.0, 1.0 - cdf);
}

}  // namespace

double error_count_pmf(const CodewordErrorModel& m, long long k) {
    validate(m);
    if (k < 0 || k > m.N) {
        throw PreconditionError("error_count_pmf: k = " + std::to_string(k) +
                                " outside [0, N]");
    }
    double lp = log_binom_pmf(m.N, k, m.p_e);
    return lp == -INFINITY ? 0.0 : std::exp(lp);
}

double failure_rate(const CodewordErrorModel& m, TailApprox approx) {
    validate(m);
    const double np = static_cast<double>(m.N) * m.p_e;
    switch (approx) {
        case TailApprox::gaussian: {
            if (m.p_e <= 0.0 || m.p_e >= 1.0) {
                return m.p_e <= 0.0 ? 0.0 : (m.alpha >= m.N ? 0.0 : 1.0);
            }
            double sd = std::sqrt(np * (1.0 - m.p_e));
            return q_func((static_cast<double>(m.alpha) - np) / sd);
        }
        case TailApprox::poisson:
            return poisson_upper_tail(np, m.alpha);
        case TailApprox::exact:
            return binomial_upper_tail(m.N, m.p_e, m.alpha);
    }
    throw PreconditionError("failure_rate: unknown approximation mode");
}

}  // namespace flashread
