#include "flashread/infotheory.hpp"

#include <cmath>
#include <string>

namespace flashread {

namespace {

constexpr double kLog2 = 0.6931471805599453;

double xlog2x(double x) {
    return x > 0.0 ? x * std::log2(x) : 0.0;  // 0 log 0 := 0
}

void check_compatible(const TransitionMatrix& P, const TransitionMatrix& P_hat) {
    if (P.num_intervals() != P_hat.num_intervals()) {
        throw PreconditionError("transition matrices have different interval counts");
    }
    for (int row = 0; row < 2; ++row) {
        for (std::size_t j = 0; j < P.num_intervals(); ++j) {
            if (P.p[row][j] > 0.0 && P_hat.p[row][j] <= 0.0) {
                throw SupportMismatchError(
                    "estimated transition probability is zero on the channel support "
                    "(row " +
                    std::to_string(row + 1) + ", interval " + std::to_string(j + 1) + ")");
            }
        }
    }
}

}  // namespace

double mutual_information(const TransitionMatrix& P) {
    double acc = 0.0;
    for (std::size_t j = 0; j < P.num_intervals(); ++j) {
        const double p1 = P.p[0][j];
        const double p2 = P.p[1][j];
        acc += xlog2x(p1) + xlog2x(p2) - 2.0 * xlog2x(0.5 * (p1 + p2));
    }
    return 0.5 * acc;
}

double mismatched_bound(const TransitionMatrix& P, const TransitionMatrix& P_hat) {
    check_compatible(P, P_hat);
    double acc = 0.0;
    for (std::size_t j = 0; j < P.num_intervals(); ++j) {
        const double p1 = P.p[0][j];
        const double p2 = P.p[1][j];
        const double q1 = P_hat.p[0][j];
        const double q2 = P_hat.p[1][j];
        if (p1 > 0.0) acc += p1 * std::log2(q1);
        if (p2 > 0.0) acc += p2 * std::log2(q2);
        if (p1 + p2 > 0.0) acc -= (p1 + p2) * std::log2(0.5 * (q1 + q2));
    }
    return 0.5 * acc;
}

double kl_divergence(const TransitionMatrix& P, const TransitionMatrix& P_hat) {
    check_compatible(P, P_hat);
    double acc = 0.0;
    for (std::size_t j = 0; j < P.num_intervals(); ++j) {
        for (int row = 0; row < 2; ++row) {
            const double p = P.p[row][j];
            if (p > 0.0) acc += p * std::log2(p / P_hat.p[row][j]);
        }
    }
    return 0.5 * acc;
}

LLRTable llr_table(const TransitionMatrix& P_hat) {
    LLRTable table;
    table.thresholds = P_hat.thresholds;
    table.llr.resize(P_hat.num_intervals());
    for (std::size_t j = 0; j < P_hat.num_intervals(); ++j) {
        const double p1 = P_hat.p[0][j];
        const double p2 = P_hat.p[1][j];
        if (p1 <= 0.0 && p2 <= 0.0) {
            throw EmptyIntervalError("llr_table: interval " + std::to_string(j + 1) +
                                     " has zero probability under both inputs");
        }
        double llr;
        if (p1 <= 0.0) {
            llr = -kLlrMax;
        } else if (p2 <= 0.0) {
            llr = kLlrMax;
        } else {
            llr = std::log(p1 / p2);
            if (llr > kLlrMax) llr = kLlrMax;
            if (llr < -kLlrMax) llr = -kLlrMax;
        }
        table.llr[j] = llr;
    }
    return table;
}

}  // namespace flashread
