#include "flashread/estimation.hpp"

#include <algorithm>
#include <cmath>

namespace flashread {

namespace {
constexpr double kTwoSqrt2Pi = 5.013256549262001;  // 2*sqrt(2*pi)
}  // namespace

namespace {

// Non-throwing estimator cores. q_inv is only reached behind range guards.

EstimateStatus level1_core(const ReadRecord& r1, const ReadRecord& r2, double& mu,
                           double& sigma) {
    if (!(r1.t < r2.t)) return EstimateStatus::precondition;
    if (!(r1.y > 0.0 && 2.0 * r1.y < 1.0)) return EstimateStatus::out_of_range;
    if (!(r2.y > 0.0 && 2.0 * r2.y < 1.0)) return EstimateStatus::out_of_range;
    const double a1 = q_inv(2.0 * r1.y);
    const double a2 = q_inv(2.0 * r2.y);
    if (a1 == a2) return EstimateStatus::degenerate;
    sigma = (r2.t - r1.t) / (a1 - a2);
    if (!(sigma > 0.0)) return EstimateStatus::inconsistent;
    mu = r2.t + sigma * a2;
    return EstimateStatus::ok;
}

EstimateStatus level2_core(const ReadRecord& r3, const ReadRecord& r4, double mu1_hat,
                           double sigma1_hat, double& mu, double& sigma) {
    if (!(r3.t < r4.t)) return EstimateStatus::precondition;
    const double m3 = 2.0 * r3.y - q_func((mu1_hat - r3.t) / sigma1_hat);
    const double m4 = 2.0 * r4.y - q_func((mu1_hat - r4.t) / sigma1_hat);
    if (!(m3 > 0.0 && m3 < 1.0)) return EstimateStatus::out_of_range;
    if (!(m4 > 0.0 && m4 < 1.0)) return EstimateStatus::out_of_range;
    const double a3 = q_inv(m3);
    const double a4 = q_inv(m4);
    if (a3 == a4) return EstimateStatus::degenerate;
    sigma = (r4.t - r3.t) / (a3 - a4);
    if (!(sigma > 0.0)) return EstimateStatus::inconsistent;
    mu = r4.t + sigma * a4;
    return EstimateStatus::ok;
}

[[noreturn]] void throw_status(EstimateStatus st, const char* where) {
    switch (st) {
        case EstimateStatus::precondition:
            throw PreconditionError(std::string(where) + ": reads out of order or ill-formed");
        case EstimateStatus::out_of_range:
            throw OutOfRangeError(std::string(where) +
                                  ": level mass outside (0,1); read not invertible");
        case EstimateStatus::degenerate:
            throw DegenerateReadsError(std::string(where) +
                                       ": reads carry identical cdf information");
        case EstimateStatus::inconsistent:
            throw InconsistentReadsError(std::string(where) + ": reads jointly contradictory");
        case EstimateStatus::ok:
            break;
    }
    throw Error(std::string(where) + ": unreachable");
}

}  // namespace

std::pair<double, double> estimate_level1(const ReadRecord& r1, const ReadRecord& r2) {
    double mu, sigma;
    EstimateStatus st = level1_core(r1, r2, mu, sigma);
    if (st != EstimateStatus::ok) throw_status(st, "estimate_level1");
    return {mu, sigma};
}

std::pair<double, double> estimate_level2(const ReadRecord& r3, const ReadRecord& r4,
                                          double mu1_hat, double sigma1_hat) {
    double mu, sigma;
    EstimateStatus st = level2_core(r3, r4, mu1_hat, sigma1_hat, mu, sigma);
    if (st != EstimateStatus::ok) throw_status(st, "estimate_level2");
    return {mu, sigma};
}

double estimate_t_star(double mu1_hat, double sigma1_hat, double mu2_hat, double sigma2_hat) {
    if (!(sigma1_hat > 0.0 && sigma2_hat > 0.0)) {
        throw InconsistentReadsError("estimate_t_star: non-positive sigma estimate");
    }
    if (!(mu1_hat < mu2_hat)) {
        throw InconsistentReadsError("estimate_t_star: level means out of order");
    }
    auto t = gaussian_intersection(mu1_hat, sigma1_hat, mu2_hat, sigma2_hat);
    if (!t) {
        throw InconsistentReadsError("estimate_t_star: no pdf intersection between the means");
    }
    return *t;
}

std::pair<double, double> laplace_estimate_level1(const ReadRecord& r1, const ReadRecord& r2) {
    if (!(r1.t < r2.t)) {
        throw PreconditionError("laplace_estimate_level1: reads must satisfy t1 < t2");
    }
    if (r1.y == r2.y) {
        throw DegenerateReadsError("laplace_estimate_level1: equal reads");
    }
    const double u1 = 1.0 - 2.0 * r1.y;
    const double u2 = 1.0 - 2.0 * r2.y;
    if (!(u1 > 0.0) || !(u2 > 0.0)) {
        throw OutOfRangeError("laplace_estimate_level1: 1-2y must stay positive");
    }
    const double denom = std::log(u1) - std::log(u2);
    if (denom == 0.0) {
        throw DegenerateReadsError("laplace_estimate_level1: zero log difference");
    }
    const double b = (r2.t - r1.t) / denom;
    if (!(b > 0.0)) {
        throw InconsistentReadsError("laplace_estimate_level1: implied scale <= 0");
    }
    return {r2.t + b * std::log(2.0 * u2), b};
}

FirstOrderErrors first_order_errors(const VoltageModel& truth, double t1, double t2, double ny1,
                                    double ny2) {
    if (!truth.is_slc() || truth.family() != NoiseFamily::gaussian) {
        throw UnsupportedModelError("first_order_errors: Gaussian SLC model required");
    }
    const double mu1 = truth.level(0).mu;
    const double s1 = truth.level(0).scale;
    FirstOrderErrors e;
    e.n1 = kTwoSqrt2Pi * std::exp(0.5 * (t1 - mu1) * (t1 - mu1) / (s1 * s1)) * ny1;
    e.n2 = kTwoSqrt2Pi * std::exp(0.5 * (t2 - mu1) * (t2 - mu1) / (s1 * s1)) * ny2;
    e.sigma1_sensitivity = -s1 * s1 / (t2 - t1) * (e.n2 - e.n1);
    e.mu1_sensitivity = -s1 * ((t2 - mu1) * e.n1 - (t1 - mu1) * e.n2) / (t2 - t1);
    return e;
}

// ---- full-history estimator --------------------------------------------------

EstimateStatus try_estimate_sorted(std::span<const ReadRecord> sorted_reads,
                                   const KnownParams& known, ParameterEstimate& out) {
    const int need1 = 2 - (known.mu1 ? 1 : 0) - (known.sigma1 ? 1 : 0);
    const int need2 = 2 - (known.mu2 ? 1 : 0) - (known.sigma2 ? 1 : 0);
    if (static_cast<int>(sorted_reads.size()) != need1 + need2) {
        return EstimateStatus::precondition;
    }

    // Level 1 from the leftmost reads.
    if (known.mu1 && known.sigma1) {
        out.mu1_hat = *known.mu1;
        out.sigma1_hat = *known.sigma1;
    } else if (known.sigma1) {
        const ReadRecord& r = sorted_reads[0];
        if (!(r.y > 0.0 && 2.0 * r.y < 1.0)) return EstimateStatus::out_of_range;
        out.sigma1_hat = *known.sigma1;
        out.mu1_hat = r.t + out.sigma1_hat * q_inv(2.0 * r.y);
    } else if (known.mu1) {
        // A known mean acts as the virtual read (t = mu1, y = 1/4).
        ReadRecord virt{*known.mu1, 0.25};
        const ReadRecord& r = sorted_reads[0];
        EstimateStatus st = r.t < virt.t
                                ? level1_core(r, virt, out.mu1_hat, out.sigma1_hat)
                                : level1_core(virt, r, out.mu1_hat, out.sigma1_hat);
        if (st != EstimateStatus::ok) return st;
    } else {
        EstimateStatus st = level1_core(sorted_reads[0], sorted_reads[1], out.mu1_hat,
                                        out.sigma1_hat);
        if (st != EstimateStatus::ok) return st;
    }

    // Level 2 from the rightmost reads, cancelling the level-1 estimate.
    if (known.mu2 && known.sigma2) {
        out.mu2_hat = *known.mu2;
        out.sigma2_hat = *known.sigma2;
    } else if (known.sigma2) {
        const ReadRecord& r = sorted_reads[sorted_reads.size() - 1];
        const double m = 2.0 * r.y - q_func((out.mu1_hat - r.t) / out.sigma1_hat);
        if (!(m > 0.0 && m < 1.0)) return EstimateStatus::out_of_range;
        out.sigma2_hat = *known.sigma2;
        out.mu2_hat = r.t + out.sigma2_hat * q_inv(m);
    } else if (known.mu2) {
        // Virtual read at the known mean: level-2 mass is exactly 1/2 there,
        // so y = (q(mu2) + 1/2) / 2.
        const double q_at_mu2 = q_func((out.mu1_hat - *known.mu2) / out.sigma1_hat);
        ReadRecord virt{*known.mu2, 0.5 * (q_at_mu2 + 0.5)};
        const ReadRecord& r = sorted_reads[sorted_reads.size() - 1];
        EstimateStatus st =
            r.t < virt.t
                ? level2_core(r, virt, out.mu1_hat, out.sigma1_hat, out.mu2_hat, out.sigma2_hat)
                : level2_core(virt, r, out.mu1_hat, out.sigma1_hat, out.mu2_hat, out.sigma2_hat);
        if (st != EstimateStatus::ok) return st;
    } else {
        EstimateStatus st = level2_core(sorted_reads[sorted_reads.size() - 2],
                                        sorted_reads[sorted_reads.size() - 1], out.mu1_hat,
                                        out.sigma1_hat, out.mu2_hat, out.sigma2_hat);
        if (st != EstimateStatus::ok) return st;
    }

    if (!(out.mu1_hat < out.mu2_hat)) return EstimateStatus::inconsistent;
    auto t = gaussian_intersection(out.mu1_hat, out.sigma1_hat, out.mu2_hat, out.sigma2_hat);
    if (!t) return EstimateStatus::inconsistent;
    out.t_star_hat = *t;
    return EstimateStatus::ok;
}

ParameterEstimate estimate_from_reads(std::vector<ReadRecord> reads, const KnownParams& known) {
    const int need = known.reads_needed();
    if (static_cast<int>(reads.size()) != need) {
        throw PreconditionError("estimate_from_reads: expected " + std::to_string(need) +
                                " reads, got " + std::to_string(reads.size()));
    }
    std::stable_sort(reads.begin(), reads.end(), [](const ReadRecord& a, const ReadRecord& b) {
        return a.t < b.t || (a.t == b.t && a.y < b.y);
    });
    ParameterEstimate est;
    EstimateStatus st = try_estimate_sorted(reads, known, est);
    if (st != EstimateStatus::ok) throw_status(st, "estimate_from_reads");
    return est;
}

// ---- progressive read ---------------------------------------------------------

namespace {

struct Planner {
    const Reader& reader;
    const AdaptivePlan& plan;
    std::vector<ReadRecord> taken;

    ReadRecord take(double t) {
        const double lo = plan.window_lo, hi = plan.window_hi;
        if (t < lo - 1e-9 || t > hi + 1e-9) {
            // Re-planning pushed the read outside the allowed window; clamping
            // further would break isolation, so give up.
            throw EstimationFailedError("progressive_read: planned threshold " +
                                            std::to_string(t) + " lies outside the voltage window",
                                        taken);
        }
        ReadRecord r = reader(std::clamp(t, lo, hi));
        taken.push_back(r);
        return r;
    }

    // Threshold hitting a target level-cdf mass under (mu, sigma) guesses.
    static double at_mass(double mu, double sigma, double mass) {
        return mu - sigma * q_inv(mass);
    }

    // Refine a level mean from one read with an assumed sigma; falls back to
    // the prior guess when the observed mass is not invertible.
    static double refine_mu(double t, double mass, double sigma, double fallback) {
        if (mass > 0.001 && mass < 0.999) {
            return t + sigma * q_inv(mass);
        }
        return fallback;
    }
};

}  // namespace

ProgressiveResult progressive_read(const Reader& reader, const AdaptivePlan& plan) {
    const KnownParams& known = plan.known;
    const int need1 = 2 - (known.mu1 ? 1 : 0) - (known.sigma1 ? 1 : 0);
    const int need2 = 2 - (known.mu2 ? 1 : 0) - (known.sigma2 ? 1 : 0);

    Planner pl{reader, plan, {}};
    const double mu1_g = known.mu1.value_or(plan.mu1_guess);
    const double s1_g = known.sigma1.value_or(plan.sigma1_guess);
    const double mu2_g = known.mu2.value_or(plan.mu2_guess);
    const double s2_g = known.sigma2.value_or(plan.sigma2_guess);

    double mu1_ref = mu1_g;
    double mu2_ref = mu2_g;

    std::vector<ReadRecord> l1_reads;
    std::optional<ReadRecord> mid_probe;  // a mid/right read recycled for level 2

    // ---- level-1 reads ----
    if (need1 == 2) {
        const double t_init = plan.initial_threshold.value_or(0.5 * (mu1_g + mu2_g));
        ReadRecord probe = pl.take(t_init);
        if (probe.y <= 0.1) {
            // Already far left: the probe is the low-mass level-1 read.
            l1_reads.push_back(probe);
            mu1_ref = Planner::refine_mu(probe.t, 2.0 * probe.y, s1_g, mu1_g);
            double t_hi = Planner::at_mass(mu1_ref, s1_g, plan.level1_hi_mass);
            if (t_hi <= probe.t) t_hi = probe.t + 0.25 * s1_g;
            l1_reads.push_back(pl.take(t_hi));
        } else if (probe.y >= 0.9) {
            // Far right: keep the probe for level 2, read the level-1 pair cold.
            mid_probe = probe;
            l1_reads.push_back(pl.take(Planner::at_mass(mu1_g, s1_g, plan.level1_lo_mass)));
            l1_reads.push_back(pl.take(Planner::at_mass(mu1_g, s1_g, plan.level1_hi_mass)));
        } else {
            // Mid region: recycle the probe for level 2 after cancellation and
            // take both level-1 reads to its far left.
            mid_probe = probe;
            if (2.0 * probe.y < 0.98) {
                mu1_ref = Planner::refine_mu(probe.t, 2.0 * probe.y, s1_g, mu1_g);
            }
            double t_hi = Planner::at_mass(mu1_ref, s1_g, plan.level1_hi_mass);
            ReadRecord r_hi = pl.take(std::min(t_hi, probe.t - 0.25 * s1_g));
            l1_reads.push_back(r_hi);
            mu1_ref = Planner::refine_mu(r_hi.t, 2.0 * r_hi.y, s1_g, mu1_ref);
            l1_reads.push_back(pl.take(Planner::at_mass(mu1_ref, s1_g, plan.level1_lo_mass)));
        }
    } else if (need1 == 1) {
        if (known.sigma1) {
            // One read near the level mean pins the mean with least noise gain.
            l1_reads.push_back(pl.take(mu1_g));
        } else {
            // Known mean: spread one read to the right for the sigma estimate.
            l1_reads.push_back(pl.take(Planner::at_mass(mu1_g, s1_g, plan.level1_hi_mass)));
        }
    }

    // Provisional level-1 estimate; steers level-2 placement only, so failures
    // just fall back to the prior guesses.
    std::optional<std::pair<double, double>> lvl1;
    {
        std::sort(l1_reads.begin(), l1_reads.end(),
                  [](const ReadRecord& a, const ReadRecord& b) { return a.t < b.t; });
        double mu = 0.0, sg = 0.0;
        EstimateStatus st = EstimateStatus::precondition;
        if (known.mu1 && known.sigma1) {
            mu = *known.mu1;
            sg = *known.sigma1;
            st = EstimateStatus::ok;
        } else if (known.sigma1 && !l1_reads.empty()) {
            const ReadRecord& r = l1_reads[0];
            if (r.y > 0.0 && 2.0 * r.y < 1.0) {
                sg = *known.sigma1;
                mu = r.t + sg * q_inv(2.0 * r.y);
                st = EstimateStatus::ok;
            }
        } else if (known.mu1 && !l1_reads.empty()) {
            ReadRecord virt{*known.mu1, 0.25};
            st = l1_reads[0].t < virt.t ? level1_core(l1_reads[0], virt, mu, sg)
                                        : level1_core(virt, l1_reads[0], mu, sg);
        } else if (l1_reads.size() >= 2) {
            st = level1_core(l1_reads[0], l1_reads[1], mu, sg);
        }
        if (st == EstimateStatus::ok) lvl1 = {{mu, sg}};
    }

    auto level2_mass_est = [&](const ReadRecord& r) -> double {
        if (!lvl1) return -1.0;
        return 2.0 * r.y - q_func((lvl1->first - r.t) / lvl1->second);
    };

    // ---- level-2 reads ----
    if (need2 == 2) {
        if (mid_probe) {
            // The probe supplies one level-2 sample; place the remaining read
            // at a complementary mass.
            double m = level2_mass_est(*mid_probe);
            if (m > 0.001 && m < 0.999) {
                mu2_ref = mid_probe->t + s2_g * q_inv(m);
            }
            double target = (m > 0.5) ? plan.level2_lo_mass : plan.level2_hi_mass;
            double t4 = Planner::at_mass(mu2_ref, s2_g, target);
            if (std::abs(t4 - mid_probe->t) < 0.25 * s2_g) {
                t4 = mid_probe->t + ((target > 0.5) ? 0.25 * s2_g : -0.25 * s2_g);
            }
            pl.take(t4);
        } else {
            ReadRecord r3 = pl.take(Planner::at_mass(mu2_ref, s2_g, plan.level2_lo_mass));
            double m = level2_mass_est(r3);
            if (m > 0.001 && m < 0.999) {
                mu2_ref = r3.t + s2_g * q_inv(m);
            }
            double t4 = Planner::at_mass(mu2_ref, s2_g, plan.level2_hi_mass);
            if (t4 <= r3.t) t4 = r3.t + 0.25 * s2_g;
            pl.take(t4);
        }
    } else if (need2 == 1) {
        if (known.sigma2) {
            pl.take(mu2_ref);  // mean read, least amplification
        } else {
            pl.take(Planner::at_mass(mu2_ref, s2_g, plan.level2_lo_mass));
        }
    }

    ProgressiveResult result;
    result.reads = pl.taken;
    try {
        result.estimate = estimate_from_reads(pl.taken, known);
    } catch (const EstimationFailedError&) {
        throw;
    } catch (const Error& e) {
        throw EstimationFailedError(std::string("progressive_read: ") + e.what(), pl.taken);
    }

    // Post-hoc isolation check: the estimated level-2 contamination at the
    // level-1 read locations must be negligible or the estimate is untrusted.
    if (need1 > 0) {
        std::vector<ReadRecord> sorted = pl.taken;
        std::sort(sorted.begin(), sorted.end(),
                  [](const ReadRecord& a, const ReadRecord& b) { return a.t < b.t; });
        for (int i = 0; i < need1; ++i) {
            double contamination =
                q_func((result.estimate.mu2_hat - sorted[i].t) / result.estimate.sigma2_hat);
            if (contamination > plan.contamination_limit) {
                throw EstimationFailedError(
                    "progressive_read: level-1 reads contaminated by level 2 "
                    "(estimated cdf " +
                        std::to_string(contamination) + ")",
                    pl.taken);
            }
        }
    }
    return result;
}

}  // namespace flashread
