#pragma once

#include <vector>

#include "flashread/channel.hpp"
#include "flashread/errors.hpp"

namespace flashread {

// Saturation value (natural-log units) for LLRs of zero-probability intervals.
inline constexpr double kLlrMax = 30.0;

// Per-interval log-likelihood ratios log(p1k / p2k), natural log.
struct LLRTable {
    std::vector<double> thresholds;
    std::vector<double> llr;  // thresholds.size() + 1 entries
};

// Symmetric mutual information of the 2 x (M+1) channel, in bits.
double mutual_information(const TransitionMatrix& P);

// Achievable-rate lower bound under maximum-likelihood decoding matched to
// P_hat while the channel follows P, in bits. Requires P_hat > 0 wherever
// P > 0 (throws SupportMismatchError otherwise).
double mismatched_bound(const TransitionMatrix& P, const TransitionMatrix& P_hat);

// Relative entropy D(P || P_hat) between the row distributions, in bits.
double kl_divergence(const TransitionMatrix& P, const TransitionMatrix& P_hat);

// LLR table from (estimated) transition probabilities; entries clamp to
// +/- kLlrMax when one row probability is zero. Throws EmptyIntervalError if
// an interval has zero probability under both inputs.
LLRTable llr_table(const TransitionMatrix& P_hat);

}  // namespace flashread
