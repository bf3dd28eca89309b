#include "oracles.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace flashread::oracles {

namespace {

double normal_density(double x) { return 0.3989422804014327 * std::exp(-0.5 * x * x); }

double simpson(double a, double b) {
    const double m = 0.5 * (a + b);
    return (b - a) / 6.0 * (normal_density(a) + 4.0 * normal_density(m) + normal_density(b));
}

double adaptive(double a, double b, double whole, double eps, int depth) {
    const double m = 0.5 * (a + b);
    const double left = simpson(a, m);
    const double right = simpson(m, b);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * eps) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adaptive(a, m, left, eps / 2.0, depth - 1) +
           adaptive(m, b, right, eps / 2.0, depth - 1);
}

}  // namespace

double q_integral(double x) {
    if (x > 40.0) return 0.0;
    if (x < -40.0) return 1.0;
    // Integrate the density from x to 40 in unit chunks.
    double acc = 0.0;
    double a = x;
    while (a < 40.0) {
        double b = std::min(a + 1.0, 40.0);
        acc += adaptive(a, b, simpson(a, b), 1e-14, 40);
        a = b;
    }
    return acc;
}

double q_inv_bisect(double y) {
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        if (q_func(mid) > y) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-14) break;
    }
    return 0.5 * (lo + hi);
}

double ber_direct(double mu1, double s1, double mu2, double s2, double t) {
    auto q = [](double x) { return 0.5 * std::erfc(x / 1.4142135623730951); };
    return 0.5 * (q((mu2 - t) / s2) + 1.0 - q((mu1 - t) / s1));
}

double grid_search_t_star(double mu1, double s1, double mu2, double s2, double step) {
    double best_t = mu1;
    double best = std::numeric_limits<double>::infinity();
    for (double t = mu1 - 3.0 * s1; t <= mu2 + 3.0 * s2; t += step) {
        double b = ber_direct(mu1, s1, mu2, s2, t);
        if (b < best) {
            best = b;
            best_t = t;
        }
    }
    return best_t;
}

double binary_entropy_bits(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double binom_pmf_direct(long long n, long long k, double p) {
    // Multiplicative form: prod_{i=1..k} ((n-k+i)/i * p) * (1-p)^(n-k).
    double acc = std::pow(1.0 - p, static_cast<double>(n - k));
    for (long long i = 1; i <= k; ++i) {
        acc *= static_cast<double>(n - k + i) / static_cast<double>(i) * p;
    }
    return acc;
}

double binom_upper_tail_direct(long long n, double p, long long alpha) {
    double acc = 0.0;
    for (long long k = alpha + 1; k <= n; ++k) acc += binom_pmf_direct(n, k, p);
    return acc;
}

// ---- exhaustive DP ---------------------------------------------------------------

namespace {

struct Ctx {
    const std::vector<double>& thresholds;
    const DpConfig& cfg;
    int num_bins;
    // Observations handed to bayes_update are bin values, so the update must
    // integrate the noise over the quantization bin.
    ReadNoiseModel quantized_noise;
};

double best_continuation(const Ctx& ctx, const PriorGrid& posterior,
                         std::vector<ReadRecord>& history, int remaining, int* best_action);

// Predictive bin masses of the quantized observation at threshold index a.
std::vector<double> predictive_bins(const Ctx& ctx, const PriorGrid& posterior, double t) {
    std::vector<double> bin_mass(ctx.num_bins, 0.0);
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        const ParameterVector& x = posterior.point(i);
        const double c = 0.5 * (q_func((x.mu1 - t) / x.sigma1) + q_func((x.mu2 - t) / x.sigma2));
        for (const ObsBin& b :
             observation_distribution(c, ctx.cfg.noise, ctx.cfg.y_grid, ctx.num_bins)) {
            bin_mass[b.index] += posterior.mass(i) * b.mass;
        }
    }
    return bin_mass;
}

double action_value(const Ctx& ctx, const PriorGrid& posterior,
                    std::vector<ReadRecord>& history, int remaining, int a) {
    const double t = ctx.thresholds[a];
    const std::vector<double> bin_mass = predictive_bins(ctx, posterior, t);
    double acc = 0.0;
    for (int b = 0; b < ctx.num_bins; ++b) {
        if (bin_mass[b] <= 0.0) continue;
        ReadRecord r{t, ctx.cfg.y_grid.step * b};
        PriorGrid post = bayes_update(posterior, r, ctx.quantized_noise);
        history.push_back(r);
        double v = best_continuation(ctx, post, history, remaining - 1, nullptr);
        history.pop_back();
        acc += bin_mass[b] * v;
    }
    return acc;
}

double best_continuation(const Ctx& ctx, const PriorGrid& posterior,
                         std::vector<ReadRecord>& history, int remaining, int* best_action) {
    if (remaining == 0) {
        return expected_reward(posterior, history, ctx.cfg.reward, ctx.cfg.known);
    }
    double best = -std::numeric_limits<double>::infinity();
    int best_a = -1;
    for (int a = 0; a < static_cast<int>(ctx.thresholds.size()); ++a) {
        double v = action_value(ctx, posterior, history, remaining, a);
        if (v > best) {
            best = v;
            best_a = a;
        }
    }
    if (best_action != nullptr) *best_action = best_a;
    return best;
}

}  // namespace

ExhaustiveDpResult exhaustive_dp(const PriorGrid& prior, const std::vector<double>& thresholds,
                                 const DpConfig& config) {
    const double inv = 1.0 / config.y_grid.step;
    Ctx ctx{thresholds, config, static_cast<int>(std::floor(inv + 0.5)) + 1,
            config.noise.quantized(config.y_grid)};
    std::vector<ReadRecord> history;
    ExhaustiveDpResult res;
    res.value = best_continuation(ctx, prior, history, config.horizon, &res.best_first_action);

    // Per-bin optimal second reads after the best first read (horizon 2).
    if (config.horizon == 2 && res.best_first_action >= 0) {
        const double t1 = thresholds[res.best_first_action];
        const std::vector<double> bin_mass = predictive_bins(ctx, prior, t1);
        for (int b = 0; b < ctx.num_bins; ++b) {
            if (bin_mass[b] <= 0.0) continue;
            ReadRecord r{t1, config.y_grid.step * b};
            PriorGrid post = bayes_update(prior, r, ctx.quantized_noise);
            history.assign(1, r);
            int sub_best = -1;
            best_continuation(ctx, post, history, 1, &sub_best);
            res.second_actions.emplace_back(b, sub_best);
        }
        history.clear();
    }
    return res;
}

}  // namespace flashread::oracles
