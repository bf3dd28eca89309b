#pragma once

#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flashread/channel.hpp"
#include "flashread/errors.hpp"

namespace flashread {

// First-order (in the read noise) perturbation predictions for the level-1
// estimators: n1/n2 are the amplified noise terms and the *_sensitivity
// fields hold the predicted shifts of sigma1_hat and mu1_hat.
struct FirstOrderErrors {
    double n1 = 0.0;
    double n2 = 0.0;
    double sigma1_sensitivity = 0.0;
    double mu1_sensitivity = 0.0;
};

struct ParameterEstimate {
    double mu1_hat = 0.0;
    double sigma1_hat = 0.0;
    double mu2_hat = 0.0;
    double sigma2_hat = 0.0;
    double t_star_hat = 0.0;
    std::optional<FirstOrderErrors> diagnostics;
};

// Raised when the adaptive plan cannot complete; carries the reads taken.
struct EstimationFailedError : Error {
    EstimationFailedError(const std::string& what, std::vector<ReadRecord> reads)
        : Error(what), partial_reads(std::move(reads)) {}
    std::vector<ReadRecord> partial_reads;
};

// Level-1 estimators from two reads clear of level 2 (Gaussian).
std::pair<double, double> estimate_level1(const ReadRecord& r1, const ReadRecord& r2);

// Level-2 estimators from two right-side reads, cancelling the estimated
// level-1 contribution.
std::pair<double, double> estimate_level2(const ReadRecord& r3, const ReadRecord& r4,
                                          double mu1_hat, double sigma1_hat);

// Estimated BER-minimizing threshold from the four estimated parameters.
double estimate_t_star(double mu1_hat, double sigma1_hat, double mu2_hat, double sigma2_hat);

// Level-1 estimators for Laplace-distributed levels.
std::pair<double, double> laplace_estimate_level1(const ReadRecord& r1, const ReadRecord& r2);

// Parameters the caller already knows; reads are only spent on the rest.
struct KnownParams {
    std::optional<double> mu1;
    std::optional<double> sigma1;
    std::optional<double> mu2;
    std::optional<double> sigma2;

    int reads_needed() const {
        int n = 4;
        if (mu1) n -= 1;
        if (sigma1) n -= 1;
        if (mu2) n -= 1;
        if (sigma2) n -= 1;
        return n;
    }
};

// Full estimate from an arbitrary set of reads: sorted by threshold, the
// leftmost reads isolate level 1 and the rightmost estimate level 2. Known
// parameters replace reads per the reduced-read rules.
ParameterEstimate estimate_from_reads(std::vector<ReadRecord> reads,
                                      const KnownParams& known = {});

// Non-throwing estimator core (reads must already be sorted by threshold).
// The dynamic program calls this in its innermost loop.
enum class EstimateStatus { ok, precondition, out_of_range, degenerate, inconsistent };
EstimateStatus try_estimate_sorted(std::span<const ReadRecord> sorted_reads,
                                   const KnownParams& known, ParameterEstimate& out);

// Configuration of the Progressive Read Algorithm.
struct AdaptivePlan {
    // Voltage window the plan may read in.
    double window_lo = 0.2;
    double window_hi = 3.0;
    // First read: midpoint of the prior level means unless overridden.
    std::optional<double> initial_threshold;
    // Prior guesses used to seed read placement before any estimate exists.
    double mu1_guess = 1.0;
    double sigma1_guess = 0.17;
    double mu2_guess = 1.95;
    double sigma2_guess = 0.28;
    // Target level-cdf masses for the two reads isolating each level.
    double level1_lo_mass = 0.1;
    double level1_hi_mass = 0.7;
    double level2_lo_mass = 0.3;
    double level2_hi_mass = 0.7;
    // A read counts as a level-1 read only while y stays below this mark.
    double isolation_watermark = 0.45;
    // Post-hoc limit on the estimated cross-level cdf at level-1 read points.
    double contamination_limit = 0.01;
    KnownParams known;
};

using Reader = std::function<ReadRecord(double t)>;

struct ProgressiveResult {
    ParameterEstimate estimate;
    std::vector<ReadRecord> reads;  // in issue order
};

// Progressive Read Algorithm: adaptively places reads (4 minus one per known
// parameter), isolates the two levels and inverts the cdf equations.
ProgressiveResult progressive_read(const Reader& reader, const AdaptivePlan& plan = {});

// First-order error-propagation diagnostics (Gaussian SLC ground truth).
FirstOrderErrors first_order_errors(const VoltageModel& truth, double t1, double t2, double ny1,
                                    double ny2);

}  // namespace flashread
