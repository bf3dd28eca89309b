#include "flashread/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <thread>

#include "flashread/parallel.hpp"

namespace flashread {

namespace {

constexpr double kTinyProb = 1e-300;  // log2 clamp for estimated probabilities
constexpr int kMaxObsBins = 16;

double log2_clamped(double p) { return std::log2(std::max(p, kTinyProb)); }

}  // namespace

// ---- PriorGrid ----------------------------------------------------------------

PriorGrid PriorGrid::uniform_product(ParamRange mu1, ParamRange mu2, ParamRange sigma1,
                                     ParamRange sigma2) {
    std::array<ParamRange, 4> rs{mu1, mu2, sigma1, sigma2};
    for (const auto& r : rs) {
        if (!(r.hi > r.lo) || r.n < 1) {
            throw ConfigError("PriorGrid: each range needs lo < hi and n >= 1");
        }
    }
    auto centers = [](const ParamRange& r) {
        std::vector<double> v(r.n);
        const double step = (r.hi - r.lo) / r.n;
        for (int i = 0; i < r.n; ++i) v[i] = r.lo + (i + 0.5) * step;
        return v;
    };
    const auto m1 = centers(mu1), m2 = centers(mu2), s1 = centers(sigma1), s2 = centers(sigma2);

    PriorGrid g;
    g.ranges_ = rs;
    g.points_.reserve(static_cast<std::size_t>(mu1.n) * mu2.n * sigma1.n * sigma2.n);
    for (double a : m1)
        for (double b : m2)
            for (double c : s1)
                for (double d : s2) g.points_.push_back({a, b, c, d});
    g.mass_.assign(g.points_.size(), 1.0 / static_cast<double>(g.points_.size()));
    return g;
}

PriorGrid PriorGrid::from_points(std::vector<ParameterVector> points, std::vector<double> mass) {
    if (points.empty() || points.size() != mass.size()) {
        throw ConfigError("PriorGrid: points and masses must be non-empty and equal-length");
    }
    PriorGrid g;
    g.points_ = std::move(points);
    g.mass_ = std::move(mass);
    g.normalize();
    return g;
}

void PriorGrid::normalize() {
    double sum = 0.0;
    for (double m : mass_) {
        if (m < 0.0) throw ConfigError("PriorGrid: negative mass");
        sum += m;
    }
    if (sum <= 0.0) throw ConfigError("PriorGrid: zero total mass");
    for (double& m : mass_) m /= sum;
}

// ---- observation model ----------------------------------------------------------

namespace {

// Uniform-noise observation bins for a clean cdf value, open-coded for the hot
// loops. Returns the number of bins written.
int obs_bins_impl(double c, const ReadNoiseModel& noise, double step, int num_bins, int* bins,
                  double* fracs) {
    const double half = 0.5 * step;
    if (noise.kind == ReadNoiseModel::Kind::none) {
        int b = static_cast<int>(std::floor(c / step + 0.5));
        bins[0] = std::clamp(b, 0, num_bins - 1);
        fracs[0] = 1.0;
        return 1;
    }
    const double lo = c + noise.lo;
    const double hi = c + noise.hi;
    const double w = noise.hi - noise.lo;
    int b_lo = static_cast<int>(std::floor(lo / step + 0.5));
    int b_hi = static_cast<int>(std::floor(hi / step + 0.5));
    int count = 0;
    int prev_index = -1;
    for (int b = b_lo; b <= b_hi; ++b) {
        double left = (b - 0.5) * step;
        double right = (b + 0.5) * step;
        double overlap = std::min(hi, right) - std::max(lo, left);
        if (overlap <= 0.0) continue;
        int idx = std::clamp(b, 0, num_bins - 1);
        if (idx == prev_index) {
            fracs[count - 1] += overlap / w;  // clamped edge bins merge
        } else {
            bins[count] = idx;
            fracs[count] = overlap / w;
            prev_index = idx;
            ++count;
        }
    }
    return count;
}

// Probability that the quantized observation equals bin y_idx.
double obs_prob(double c, const ReadNoiseModel& noise, double step, int num_bins, int y_idx) {
    int bins[kMaxObsBins];
    double fracs[kMaxObsBins];
    int n = obs_bins_impl(c, noise, step, num_bins, bins, fracs);
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
        if (bins[i] == y_idx) p += fracs[i];
    }
    return p;
}

}  // namespace

std::vector<ObsBin> observation_distribution(double cdf_value, const ReadNoiseModel& noise,
                                             const QuantizationGrid& y_grid, int num_bins) {
    if (std::abs(y_grid.origin) > 1e-12) {
        throw ConfigError("observation_distribution: y grid origin must be 0");
    }
    int bins[kMaxObsBins];
    double fracs[kMaxObsBins];
    int n = obs_bins_impl(cdf_value, noise, y_grid.step, num_bins, bins, fracs);
    std::vector<ObsBin> out(n);
    for (int i = 0; i < n; ++i) out[i] = {bins[i], fracs[i]};
    return out;
}

// ---- bayes update ---------------------------------------------------------------

PriorGrid bayes_update(const PriorGrid& prior, const ReadRecord& r, const ReadNoiseModel& noise) {
    PriorGrid post = prior;
    double total = 0.0;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        const ParameterVector& x = prior.point(i);
        const double c = 0.5 * (q_func((x.mu1 - r.t) / x.sigma1) + q_func((x.mu2 - r.t) / x.sigma2));
        double like;
        if (noise.y_quantization) {
            const double step = noise.y_quantization->step;
            const int num_bins = static_cast<int>(std::floor(1.0 / step + 0.5)) + 1;
            const int y_idx = std::clamp(
                static_cast<int>(std::floor(r.y / step + 0.5)), 0, num_bins - 1);
            like = obs_prob(c, noise, step, num_bins, y_idx);
        } else if (noise.kind == ReadNoiseModel::Kind::none) {
            like = std::abs(r.y - std::clamp(c, 0.0, 1.0)) <= 1e-12 ? 1.0 : 0.0;
        } else {
            // Continuous observation: uniform density, with atoms at the
            // clamping boundaries.
            const double w = noise.hi - noise.lo;
            if (r.y <= 0.0) {
                like = std::clamp((0.0 - (c + noise.lo)) / w, 0.0, 1.0);
            } else if (r.y >= 1.0) {
                like = std::clamp(((c + noise.hi) - 1.0) / w, 0.0, 1.0);
            } else {
                like = (r.y - c >= noise.lo && r.y - c <= noise.hi) ? 1.0 / w : 0.0;
            }
        }
        const double m = prior.mass(i) * like;
        post.set_mass(i, m);
        total += m;
    }
    if (total <= 0.0) {
        throw InconsistentObservationError(
            "bayes_update: observation incompatible with the entire prior");
    }
    for (std::size_t i = 0; i < post.size(); ++i) post.set_mass(i, post.mass(i) / total);
    return post;
}

// ---- shared reward kernels -------------------------------------------------------

namespace {

// Interval probabilities from M cdf values (ascending thresholds) and a dot
// product against per-interval log tables; boundaries at cdf 0 and 1.
double soft_bound_point(const double* cdf1, const double* cdf2, int m_thresholds,
                        const double* l1, const double* l2, const double* l3) {
    double acc = 0.0;
    double prev1 = 0.0, prev2 = 0.0;
    for (int j = 0; j <= m_thresholds; ++j) {
        const double cur1 = (j < m_thresholds) ? cdf1[j] : 1.0;
        const double cur2 = (j < m_thresholds) ? cdf2[j] : 1.0;
        const double p1 = std::max(0.0, cur1 - prev1);
        const double p2 = std::max(0.0, cur2 - prev2);
        acc += p1 * l1[j] + p2 * l2[j] - (p1 + p2) * l3[j];
        prev1 = cur1;
        prev2 = cur2;
    }
    return 0.5 * acc;
}

// Per-interval log tables of the estimated transition probabilities.
void build_phat_logs(const ParameterEstimate& est, const double* thresholds, int m_thresholds,
                     double* l1, double* l2, double* l3) {
    double prev1 = 0.0, prev2 = 0.0;
    for (int j = 0; j <= m_thresholds; ++j) {
        double cur1 = 1.0, cur2 = 1.0;
        if (j < m_thresholds) {
            cur1 = q_func((est.mu1_hat - thresholds[j]) / est.sigma1_hat);
            cur2 = q_func((est.mu2_hat - thresholds[j]) / est.sigma2_hat);
        }
        const double p1 = std::max(0.0, cur1 - prev1);
        const double p2 = std::max(0.0, cur2 - prev2);
        l1[j] = log2_clamped(p1);
        l2[j] = log2_clamped(p2);
        l3[j] = log2_clamped(0.5 * (p1 + p2));
        prev1 = cur1;
        prev2 = cur2;
    }
}

double hard_reward_point(const ParameterVector& x, double t_star_hat) {
    const double b = 0.5 * (q_func((x.mu2 - t_star_hat) / x.sigma2) + 1.0 -
                            q_func((x.mu1 - t_star_hat) / x.sigma1));
    return 1.0 - b;
}

}  // namespace

double expected_reward(const PriorGrid& posterior, const std::vector<ReadRecord>& history,
                       const RewardSpec& reward, const KnownParams& known) {
    if (static_cast<int>(history.size()) != known.reads_needed()) {
        throw PreconditionError("expected_reward: history must be terminal");
    }
    std::vector<ReadRecord> sorted = history;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ReadRecord& a, const ReadRecord& b) {
        return a.t < b.t || (a.t == b.t && a.y < b.y);
    });
    ParameterEstimate est;
    if (try_estimate_sorted(sorted, known, est) != EstimateStatus::ok) {
        return reward.floor();
    }

    double total_mass = 0.0;
    for (std::size_t i = 0; i < posterior.size(); ++i) total_mass += posterior.mass(i);
    if (total_mass <= 0.0) throw PreconditionError("expected_reward: empty posterior");

    if (reward.kind == RewardSpec::Kind::hard) {
        double acc = 0.0;
        for (std::size_t i = 0; i < posterior.size(); ++i) {
            acc += posterior.mass(i) * hard_reward_point(posterior.point(i), est.t_star_hat);
        }
        return acc / total_mass;
    }

    // Distinct ascending thresholds of the history.
    std::vector<double> d;
    for (const auto& r : sorted) {
        if (d.empty() || r.t > d.back()) d.push_back(r.t);
    }
    const int m = static_cast<int>(d.size());
    std::vector<double> l1(m + 1), l2(m + 1), l3(m + 1);
    build_phat_logs(est, d.data(), m, l1.data(), l2.data(), l3.data());

    std::vector<double> c1(m), c2(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < posterior.size(); ++i) {
        const ParameterVector& x = posterior.point(i);
        for (int j = 0; j < m; ++j) {
            c1[j] = q_func((x.mu1 - d[j]) / x.sigma1);
            c2[j] = q_func((x.mu2 - d[j]) / x.sigma2);
        }
        acc += posterior.mass(i) *
               soft_bound_point(c1.data(), c2.data(), m, l1.data(), l2.data(), l3.data());
    }
    return acc / total_mass;
}

// ---- canonical history keys -------------------------------------------------------

namespace {

// Canonical key layout: t indices in the high bytes, y indices in the low
// bytes, both in the lexicographically sorted pair order. States sharing a
// threshold multiset are therefore contiguous in sorted key order.
std::uint64_t pack_sorted(const std::pair<int, int>* reads, int k) {
    std::uint64_t key = 0;
    for (int i = 0; i < k; ++i) key = (key << 8) | static_cast<std::uint64_t>(reads[i].first);
    for (int i = 0; i < k; ++i) key = (key << 8) | static_cast<std::uint64_t>(reads[i].second);
    return key;
}

bool feasible_sorted(const std::pair<int, int>* reads, int k) {
    for (int i = 0; i + 1 < k; ++i) {
        if (reads[i].second > reads[i + 1].second) return false;
    }
    return true;
}

}  // namespace

std::uint64_t pack_history(std::vector<std::pair<int, int>> reads) {
    std::sort(reads.begin(), reads.end());
    return pack_sorted(reads.data(), static_cast<int>(reads.size()));
}

std::optional<std::size_t> StageTable::find(std::uint64_t key) const {
    auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it == keys.end() || *it != key) return std::nullopt;
    return static_cast<std::size_t>(it - keys.begin());
}

// ---- backward recursion engine ------------------------------------------------------

namespace {

struct Engine {
    const PriorGrid& prior;
    const DpConfig& cfg;
    int nT = 0;
    int nY = 0;
    int G = 0;
    int threads = 1;
    double floor_value = 0.0;
    std::vector<double> thresholds;
    // cdf caches, threshold-major: row t is contiguous over grid points.
    std::vector<double> c1, c2, cmix;
    std::vector<double> w0;

    explicit Engine(const PriorGrid& p, const DpConfig& c) : prior(p), cfg(c) {
        if (cfg.horizon < 1 || cfg.horizon > 4) {
            throw ConfigError("backward_recursion: horizon must be 1..4");
        }
        if (cfg.known.reads_needed() != cfg.horizon) {
            throw ConfigError("backward_recursion: horizon must equal the reads left to take (" +
                              std::to_string(cfg.known.reads_needed()) + ")");
        }
        if (std::abs(cfg.y_grid.origin) > 1e-12 || !(cfg.y_grid.step > 0.0)) {
            throw ConfigError("backward_recursion: y grid must start at 0 with positive step");
        }
        const double inv = 1.0 / cfg.y_grid.step;
        if (std::abs(inv - std::floor(inv + 0.5)) > 1e-9) {
            throw ConfigError("backward_recursion: y step must divide 1");
        }
        nY = static_cast<int>(std::floor(inv + 0.5)) + 1;
        if (nY > 255) throw ConfigError("backward_recursion: y grid too fine (max 255 bins)");
        if (cfg.noise.kind == ReadNoiseModel::Kind::uniform &&
            (cfg.noise.hi - cfg.noise.lo) > (kMaxObsBins - 2) * cfg.y_grid.step) {
            throw ConfigError("backward_recursion: noise width too large for the y grid");
        }

        if (!(cfg.t_hi > cfg.t_lo)) throw ConfigError("backward_recursion: empty threshold window");
        const long long i_lo =
            static_cast<long long>(std::ceil((cfg.t_lo - cfg.t_grid.origin) / cfg.t_grid.step - 1e-9));
        const long long i_hi = static_cast<long long>(
            std::floor((cfg.t_hi - cfg.t_grid.origin) / cfg.t_grid.step + 1e-9));
        for (long long i = i_lo; i <= i_hi; ++i) {
            thresholds.push_back(cfg.t_grid.value_at(i));
        }
        nT = static_cast<int>(thresholds.size());
        if (nT < 1) throw ConfigError("backward_recursion: no thresholds on the grid window");
        if (nT > 255) throw ConfigError("backward_recursion: threshold window too wide (max 255)");

        G = static_cast<int>(prior.size());
        if (G < 1) throw ConfigError("backward_recursion: empty prior");
        w0.resize(G);
        for (int x = 0; x < G; ++x) w0[x] = prior.mass(x);

        c1.resize(static_cast<std::size_t>(nT) * G);
        c2.resize(static_cast<std::size_t>(nT) * G);
        cmix.resize(static_cast<std::size_t>(nT) * G);
        for (int t = 0; t < nT; ++t) {
            const double tv = thresholds[t];
            double* r1 = &c1[static_cast<std::size_t>(t) * G];
            double* r2 = &c2[static_cast<std::size_t>(t) * G];
            double* rm = &cmix[static_cast<std::size_t>(t) * G];
            for (int x = 0; x < G; ++x) {
                const ParameterVector& pv = prior.point(x);
                r1[x] = q_func((pv.mu1 - tv) / pv.sigma1);
                r2[x] = q_func((pv.mu2 - tv) / pv.sigma2);
                rm[x] = 0.5 * (r1[x] + r2[x]);
            }
        }

        floor_value = cfg.reward.floor();
        threads = cfg.threads > 0 ? cfg.threads
                                  : std::max(1u, std::thread::hardware_concurrency());
    }

    int obs(double c, int* bins, double* fracs) const {
        return obs_bins_impl(c, cfg.noise, cfg.y_grid.step, nY, bins, fracs);
    }

    double obs_one(double c, int y_idx) const {
        return obs_prob(c, cfg.noise, cfg.y_grid.step, nY, y_idx);
    }

    // Unnormalized posterior over the grid for a canonical state.
    void posterior_of(const std::pair<int, int>* reads, int k, std::vector<double>& w) const {
        w.assign(w0.begin(), w0.end());
        for (int i = 0; i < k; ++i) {
            const double* row = &cmix[static_cast<std::size_t>(reads[i].first) * G];
            for (int x = 0; x < G; ++x) {
                if (w[x] > 0.0) w[x] *= obs_one(row[x], reads[i].second);
            }
        }
    }

    void run_parallel(std::size_t n, const std::function<void(std::size_t)>& fn) const {
        parallel_for(n, threads, fn);
    }
};

// Enumerated stage: canonical states with joint predictive mass.
struct Stage {
    int k = 0;
    std::vector<std::uint64_t> keys;   // sorted
    std::vector<double> values;
    std::vector<std::uint16_t> actions;
    double dropped_state_mass = 0.0;

    std::optional<std::size_t> find(std::uint64_t key) const {
        auto it = std::lower_bound(keys.begin(), keys.end(), key);
        if (it == keys.end() || *it != key) return std::nullopt;
        return static_cast<std::size_t>(it - keys.begin());
    }
};

void unpack_key(std::uint64_t key, int k, std::pair<int, int>* reads) {
    for (int i = k - 1; i >= 0; --i) {
        reads[i].second = static_cast<int>(key & 0xff);
        key >>= 8;
    }
    for (int i = k - 1; i >= 0; --i) {
        reads[i].first = static_cast<int>(key & 0xff);
        key >>= 8;
    }
}

// All canonical feasible states with k reads whose joint predictive mass
// clears the admission floor.
Stage enumerate_stage(const Engine& eng, int k) {
    Stage st;
    st.k = k;

    // Threshold combinations with repetition, i0 <= i1 <= ... (k <= 3).
    std::vector<std::array<int, 3>> combos;
    if (k == 1) {
        for (int a = 0; a < eng.nT; ++a) combos.push_back({a, 0, 0});
    } else if (k == 2) {
        for (int a = 0; a < eng.nT; ++a)
            for (int b = a; b < eng.nT; ++b) combos.push_back({a, b, 0});
    } else {
        for (int a = 0; a < eng.nT; ++a)
            for (int b = a; b < eng.nT; ++b)
                for (int c = b; c < eng.nT; ++c) combos.push_back({a, b, c});
    }

    std::vector<std::vector<std::pair<std::uint64_t, double>>> kept(combos.size());
    std::vector<double> dropped(combos.size(), 0.0);

    eng.run_parallel(combos.size(), [&](std::size_t ci) {
        const auto& combo = combos[ci];
        // Accumulate path masses per y-tuple.
        std::vector<std::pair<std::uint32_t, double>> local;
        int bins[3][kMaxObsBins];
        double fracs[3][kMaxObsBins];
        for (int x = 0; x < eng.G; ++x) {
            if (eng.w0[x] <= 0.0) continue;
            int counts[3] = {1, 1, 1};
            for (int i = 0; i < k; ++i) {
                const double c = eng.cmix[static_cast<std::size_t>(combo[i]) * eng.G + x];
                counts[i] = eng.obs(c, bins[i], fracs[i]);
            }
            int pick[3] = {0, 0, 0};
            for (;;) {
                double mass = eng.w0[x];
                std::pair<int, int> reads[3];
                for (int i = 0; i < k; ++i) {
                    mass *= fracs[i][pick[i]];
                    reads[i] = {combo[i], bins[i][pick[i]]};
                }
                if (mass > 0.0) {
                    // Canonicalize y order inside equal-threshold runs.
                    std::sort(reads, reads + k);
                    if (feasible_sorted(reads, k)) {
                        std::uint32_t ykey = 0;
                        for (int i = 0; i < k; ++i) {
                            ykey = (ykey << 8) | static_cast<std::uint32_t>(reads[i].second);
                        }
                        local.emplace_back(ykey, mass);
                    }
                    // Infeasible tuples keep their probability; parents value
                    // them at the reward floor via missed lookups.
                }
                int i = 0;
                for (; i < k; ++i) {
                    if (++pick[i] < counts[i]) break;
                    pick[i] = 0;
                }
                if (i == k) break;
            }
        }
        std::sort(local.begin(), local.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& out = kept[ci];
        std::size_t i = 0;
        while (i < local.size()) {
            std::uint32_t ykey = local[i].first;
            double mass = 0.0;
            while (i < local.size() && local[i].first == ykey) {
                mass += local[i].second;
                ++i;
            }
            if (mass >= eng.cfg.state_mass_floor) {
                std::pair<int, int> reads[3];
                std::uint32_t yk = ykey;
                for (int j = k - 1; j >= 0; --j) {
                    reads[j] = {combo[j], static_cast<int>(yk & 0xff)};
                    yk >>= 8;
                }
                out.emplace_back(pack_sorted(reads, k), mass);
            } else {
                dropped[ci] += mass;
            }
        }
    });

    std::size_t total = 0;
    for (const auto& v : kept) total += v.size();
    st.keys.reserve(total);
    for (const auto& v : kept) {
        for (const auto& [key, mass] : v) st.keys.push_back(key);
    }
    std::sort(st.keys.begin(), st.keys.end());
    st.values.assign(st.keys.size(), 0.0);
    st.actions.assign(st.keys.size(), 0);
    for (double d : dropped) st.dropped_state_mass += d;
    return st;
}

// Evaluation context shared by terminal and interior sweeps of one state.
struct StateEval {
    const Engine& eng;
    std::vector<double> w;  // unnormalized posterior
    double w_sum = 0.0;
    std::pair<int, int> reads[4];
    int k = 0;
    double max_dropped = 0.0;

    StateEval(const Engine& e) : eng(e) {}

    void load(std::uint64_t key, int k_) {
        k = k_;
        unpack_key(key, k, reads);
        eng.posterior_of(reads, k, w);
        w_sum = 0.0;
        for (double v : w) w_sum += v;
    }

    void load_root() {
        k = 0;
        w.assign(eng.w0.begin(), eng.w0.end());
        w_sum = 0.0;
        for (double v : w) w_sum += v;
    }
};

// Expected value of taking threshold `a` in state `ev`, looking child states
// up in `next` (interior stages).
double interior_value(StateEval& ev, int a, const Stage& next) {
    const Engine& eng = ev.eng;
    const double* row = &eng.cmix[static_cast<std::size_t>(a) * eng.G];

    // Observation-bin masses under the current posterior.
    double mass_by_bin[256];
    int touched[256];
    int n_touched = 0;
    static thread_local std::vector<char> stamp;
    stamp.assign(eng.nY, 0);
    int bins[kMaxObsBins];
    double fracs[kMaxObsBins];
    for (int x = 0; x < eng.G; ++x) {
        if (ev.w[x] <= 0.0) continue;
        int n = eng.obs(row[x], bins, fracs);
        for (int i = 0; i < n; ++i) {
            if (!stamp[bins[i]]) {
                stamp[bins[i]] = 1;
                mass_by_bin[bins[i]] = 0.0;
                touched[n_touched++] = bins[i];
            }
            mass_by_bin[bins[i]] += ev.w[x] * fracs[i];
        }
    }
    std::sort(touched, touched + n_touched);

    double acc = 0.0;
    double dropped = 0.0;
    for (int bi = 0; bi < n_touched; ++bi) {
        const int b = touched[bi];
        const double m = mass_by_bin[b];
        if (m < eng.cfg.obs_floor * ev.w_sum) {
            dropped += m;
            continue;
        }
        std::pair<int, int> child[4];
        for (int i = 0; i < ev.k; ++i) child[i] = ev.reads[i];
        child[ev.k] = {a, b};
        std::sort(child, child + ev.k + 1);
        double v = eng.floor_value;
        if (feasible_sorted(child, ev.k + 1)) {
            std::uint64_t key = pack_sorted(child, ev.k + 1);
            if (auto idx = next.find(key)) v = next.values[*idx];
        }
        acc += m * v;
    }
    ev.max_dropped = std::max(ev.max_dropped, dropped / ev.w_sum);
    return acc / ev.w_sum;
}

// Expected terminal reward of taking the last read at threshold `a`.
double terminal_value(StateEval& ev, int a) {
    const Engine& eng = ev.eng;
    const int kT = ev.k + 1;
    const double* row_mix = &eng.cmix[static_cast<std::size_t>(a) * eng.G];
    const bool soft = eng.cfg.reward.kind == RewardSpec::Kind::soft;

    // Pass 1: bin masses.
    double mass_by_bin[256];
    int touched[256];
    int n_touched = 0;
    static thread_local std::vector<char> stamp;
    stamp.assign(eng.nY, 0);
    int bins[kMaxObsBins];
    double fracs[kMaxObsBins];
    for (int x = 0; x < eng.G; ++x) {
        if (ev.w[x] <= 0.0) continue;
        int n = eng.obs(row_mix[x], bins, fracs);
        for (int i = 0; i < n; ++i) {
            if (!stamp[bins[i]]) {
                stamp[bins[i]] = 1;
                mass_by_bin[bins[i]] = 0.0;
                touched[n_touched++] = bins[i];
            }
            mass_by_bin[bins[i]] += ev.w[x] * fracs[i];
        }
    }
    std::sort(touched, touched + n_touched);

    // Terminal threshold multiset, sorted, plus distinct values for intervals.
    std::pair<int, int> hist[4];
    for (int i = 0; i < ev.k; ++i) hist[i] = ev.reads[i];
    hist[ev.k] = {a, 0};
    std::sort(hist, hist + kT,
              [](const std::pair<int, int>& p, const std::pair<int, int>& q) {
                  return p.first < q.first;
              });
    int distinct_t[4];
    int m_distinct = 0;
    for (int i = 0; i < kT; ++i) {
        if (m_distinct == 0 || distinct_t[m_distinct - 1] != hist[i].first) {
            distinct_t[m_distinct++] = hist[i].first;
        }
    }

    // Pass 2 setup: per kept bin, run the estimator and build its log tables
    // (soft) or keep t_star (hard).
    struct BinEval {
        int b;
        double mass;
        bool ok;
        double t_star;
        double l1[5], l2[5], l3[5];
        int slot;  // bin -> index in this array
    };
    BinEval evals[256];
    int n_evals = 0;
    int slot_of[256];
    double acc = 0.0;
    double dropped = 0.0;

    for (int bi = 0; bi < n_touched; ++bi) {
        const int b = touched[bi];
        const double m = mass_by_bin[b];
        if (m < eng.cfg.obs_floor * ev.w_sum) {
            dropped += m;
            slot_of[b] = -1;
            continue;
        }
        // Terminal reads with values; the last read's bin varies per b.
        ReadRecord terminal[4];
        std::pair<int, int> sorted_pairs[4];
        for (int i = 0; i < ev.k; ++i) sorted_pairs[i] = ev.reads[i];
        sorted_pairs[ev.k] = {a, b};
        std::sort(sorted_pairs, sorted_pairs + kT);
        for (int i = 0; i < kT; ++i) {
            terminal[i] = {eng.thresholds[sorted_pairs[i].first],
                           eng.cfg.y_grid.step * sorted_pairs[i].second};
        }
        BinEval& be = evals[n_evals];
        be.b = b;
        be.mass = m;
        ParameterEstimate est;
        be.ok = try_estimate_sorted(std::span<const ReadRecord>(terminal, kT), eng.cfg.known,
                                    est) == EstimateStatus::ok;
        if (!be.ok) {
            acc += m * eng.floor_value;
            slot_of[b] = -1;
            ++n_evals;
            continue;
        }
        if (soft) {
            double dvals[4];
            for (int j = 0; j < m_distinct; ++j) dvals[j] = eng.thresholds[distinct_t[j]];
            build_phat_logs(est, dvals, m_distinct, be.l1, be.l2, be.l3);
        } else {
            be.t_star = est.t_star_hat;
        }
        slot_of[b] = n_evals;
        ++n_evals;
    }

    // Pass 3: accumulate over grid points.
    const double* rows1[4];
    const double* rows2[4];
    for (int j = 0; j < m_distinct; ++j) {
        rows1[j] = &eng.c1[static_cast<std::size_t>(distinct_t[j]) * eng.G];
        rows2[j] = &eng.c2[static_cast<std::size_t>(distinct_t[j]) * eng.G];
    }
    for (int x = 0; x < eng.G; ++x) {
        const double wx = ev.w[x];
        if (wx <= 0.0) continue;
        int n = eng.obs(row_mix[x], bins, fracs);
        double cdf1[4], cdf2[4];
        bool loaded = false;
        for (int i = 0; i < n; ++i) {
            const int slot = slot_of[bins[i]];
            if (slot < 0) continue;
            const BinEval& be = evals[slot];
            if (!be.ok) continue;
            if (soft) {
                if (!loaded) {
                    for (int j = 0; j < m_distinct; ++j) {
                        cdf1[j] = rows1[j][x];
                        cdf2[j] = rows2[j][x];
                    }
                    loaded = true;
                }
                acc += wx * fracs[i] *
                       soft_bound_point(cdf1, cdf2, m_distinct, be.l1, be.l2, be.l3);
            } else {
                acc += wx * fracs[i] * hard_reward_point(eng.prior.point(x), be.t_star);
            }
        }
    }

    ev.max_dropped = std::max(ev.max_dropped, dropped / ev.w_sum);
    return acc / ev.w_sum;
}

}  // namespace

PolicyTables backward_recursion(const PriorGrid& prior, const DpConfig& config) {
    Engine eng(prior, config);
    const int H = config.horizon;

    PolicyTables out;
    out.config = config;
    out.prior = prior;
    out.thresholds = eng.thresholds;

    // Enumerate interior stages (histories of length 1..H-1).
    std::vector<Stage> stages;
    for (int k = 1; k < H; ++k) stages.push_back(enumerate_stage(eng, k));

    // Backward sweep: stage H-1 uses terminal rewards, earlier stages look up
    // their successor stage.
    for (int k = H - 1; k >= 1; --k) {
        Stage& st = stages[k - 1];
        const Stage* next = (k == H - 1) ? nullptr : &stages[k];
        std::vector<double> local_dropped(st.keys.size(), 0.0);
        eng.run_parallel(st.keys.size(), [&](std::size_t si) {
            StateEval ev(eng);
            ev.load(st.keys[si], k);
            double best = -std::numeric_limits<double>::infinity();
            int best_a = 0;
            for (int a = 0; a < eng.nT; ++a) {
                const double v =
                    (k == H - 1) ? terminal_value(ev, a) : interior_value(ev, a, *next);
                if (v > best) {
                    best = v;
                    best_a = a;
                }
            }
            st.values[si] = best;
            st.actions[si] = static_cast<std::uint16_t>(best_a);
            local_dropped[si] = ev.max_dropped;
        });
        double stage_max = 0.0;
        for (double d : local_dropped) stage_max = std::max(stage_max, d);
        out.max_dropped_obs_mass[k] = stage_max;
        out.dropped_state_mass[k - 1] = st.dropped_state_mass;
    }

    // Root: pick the first threshold.
    {
        StateEval ev(eng);
        ev.load_root();
        double best = -std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int a = 0; a < eng.nT; ++a) {
            const double v = (H == 1) ? terminal_value(ev, a) : interior_value(ev, a, stages[0]);
            if (v > best) {
                best = v;
                best_a = a;
            }
        }
        out.max_dropped_obs_mass[0] = std::max(out.max_dropped_obs_mass[0], ev.max_dropped);
        out.t1_star_index = best_a;
        out.t1_star = eng.thresholds[best_a];
        out.root_value = best;
    }

    out.stages.resize(stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
        out.stages[i].keys = std::move(stages[i].keys);
        out.stages[i].actions = std::move(stages[i].actions);
        out.stages[i].values = std::move(stages[i].values);
    }
    return out;
}

// ---- policy files -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'R', 'P', 'O', 'L', 'v', '0', '1'};

void put_bytes(std::string& buf, const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
}
template <typename T>
void put(std::string& buf, T v) {
    put_bytes(buf, &v, sizeof(T));
}

struct Cursor {
    const char* p;
    const char* end;
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n) {
            throw FileFormatError("policy file: truncated");
        }
    }
    void get_bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, p, n);
        p += n;
    }
    template <typename T>
    T get() {
        T v;
        get_bytes(&v, sizeof(T));
        return v;
    }
};

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t prior_digest(const PriorGrid& prior) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        const ParameterVector& x = prior.point(i);
        double vals[5] = {x.mu1, x.mu2, x.sigma1, x.sigma2, prior.mass(i)};
        h = fnv1a(vals, sizeof(vals), h);
    }
    return h;
}

}  // namespace

void save_policy(const PolicyTables& tables, const std::string& path, bool include_values) {
    std::string buf;
    put_bytes(buf, kMagic, sizeof(kMagic));
    put<std::uint32_t>(buf, 1);  // format version
    put<std::uint8_t>(buf, tables.config.reward.kind == RewardSpec::Kind::soft ? 1 : 0);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(tables.config.horizon));
    put<std::uint8_t>(buf, include_values ? 1 : 0);
    put<std::uint8_t>(buf, tables.config.noise.kind == ReadNoiseModel::Kind::uniform ? 1 : 0);
    put<double>(buf, tables.config.noise.lo);
    put<double>(buf, tables.config.noise.hi);
    put<double>(buf, tables.config.t_grid.origin);
    put<double>(buf, tables.config.t_grid.step);
    put<double>(buf, tables.config.t_lo);
    put<double>(buf, tables.config.t_hi);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(tables.thresholds.size()));
    put<double>(buf, tables.config.y_grid.origin);
    put<double>(buf, tables.config.y_grid.step);
    std::uint8_t known_mask = 0;
    double known_vals[4] = {0, 0, 0, 0};
    if (tables.config.known.mu1) known_mask |= 1, known_vals[0] = *tables.config.known.mu1;
    if (tables.config.known.sigma1) known_mask |= 2, known_vals[1] = *tables.config.known.sigma1;
    if (tables.config.known.mu2) known_mask |= 4, known_vals[2] = *tables.config.known.mu2;
    if (tables.config.known.sigma2) known_mask |= 8, known_vals[3] = *tables.config.known.sigma2;
    put<std::uint8_t>(buf, known_mask);
    put_bytes(buf, known_vals, sizeof(known_vals));
    put<double>(buf, tables.config.obs_floor);
    put<double>(buf, tables.config.state_mass_floor);

    // Prior: product ranges when available, explicit points otherwise.
    if (tables.prior.ranges()) {
        put<std::uint8_t>(buf, 0);
        for (const auto& r : *tables.prior.ranges()) {
            put<double>(buf, r.lo);
            put<double>(buf, r.hi);
            put<std::uint32_t>(buf, static_cast<std::uint32_t>(r.n));
        }
    } else {
        put<std::uint8_t>(buf, 1);
        put<std::uint32_t>(buf, static_cast<std::uint32_t>(tables.prior.size()));
        for (std::size_t i = 0; i < tables.prior.size(); ++i) {
            const ParameterVector& x = tables.prior.point(i);
            put<double>(buf, x.mu1);
            put<double>(buf, x.mu2);
            put<double>(buf, x.sigma1);
            put<double>(buf, x.sigma2);
            put<double>(buf, tables.prior.mass(i));
        }
    }
    put<std::uint64_t>(buf, prior_digest(tables.prior));

    put<std::uint32_t>(buf, static_cast<std::uint32_t>(tables.t1_star_index));
    put<double>(buf, tables.t1_star);
    put<double>(buf, tables.root_value);

    put<std::uint32_t>(buf, static_cast<std::uint32_t>(tables.stages.size()));
    for (const auto& st : tables.stages) {
        put<std::uint64_t>(buf, static_cast<std::uint64_t>(st.keys.size()));
        put_bytes(buf, st.keys.data(), st.keys.size() * sizeof(std::uint64_t));
        put_bytes(buf, st.actions.data(), st.actions.size() * sizeof(std::uint16_t));
        if (include_values) {
            if (st.values.size() != st.keys.size()) {
                throw PreconditionError("save_policy: values missing; save with include_values=false");
            }
            put_bytes(buf, st.values.data(), st.values.size() * sizeof(double));
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileFormatError("policy file: cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FileFormatError("policy file: write failed for " + path);
}

PolicyTables load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileFormatError("policy file: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Cursor cur{buf.data(), buf.data() + buf.size()};

    char magic[8];
    cur.get_bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw FileFormatError("policy file: bad magic in " + path);
    }
    const auto version = cur.get<std::uint32_t>();
    if (version != 1) {
        throw FileFormatError("policy file: unsupported version " + std::to_string(version));
    }

    PolicyTables t;
    t.config.reward.kind = cur.get<std::uint8_t>() ? RewardSpec::Kind::soft : RewardSpec::Kind::hard;
    t.config.horizon = cur.get<std::uint8_t>();
    const bool has_values = cur.get<std::uint8_t>() != 0;
    const bool uniform_noise = cur.get<std::uint8_t>() != 0;
    const double noise_lo = cur.get<double>();
    const double noise_hi = cur.get<double>();
    t.config.noise = uniform_noise ? ReadNoiseModel::uniform(noise_lo, noise_hi)
                                   : ReadNoiseModel::noiseless();
    t.config.t_grid.origin = cur.get<double>();
    t.config.t_grid.step = cur.get<double>();
    t.config.t_lo = cur.get<double>();
    t.config.t_hi = cur.get<double>();
    const auto n_thresholds = cur.get<std::uint32_t>();
    t.config.y_grid.origin = cur.get<double>();
    t.config.y_grid.step = cur.get<double>();
    const auto known_mask = cur.get<std::uint8_t>();
    double known_vals[4];
    cur.get_bytes(known_vals, sizeof(known_vals));
    if (known_mask & 1) t.config.known.mu1 = known_vals[0];
    if (known_mask & 2) t.config.known.sigma1 = known_vals[1];
    if (known_mask & 4) t.config.known.mu2 = known_vals[2];
    if (known_mask & 8) t.config.known.sigma2 = known_vals[3];
    t.config.obs_floor = cur.get<double>();
    t.config.state_mass_floor = cur.get<double>();

    const auto prior_kind = cur.get<std::uint8_t>();
    if (prior_kind == 0) {
        ParamRange rs[4];
        for (auto& r : rs) {
            r.lo = cur.get<double>();
            r.hi = cur.get<double>();
            r.n = static_cast<int>(cur.get<std::uint32_t>());
        }
        t.prior = PriorGrid::uniform_product(rs[0], rs[1], rs[2], rs[3]);
    } else if (prior_kind == 1) {
        const auto g = cur.get<std::uint32_t>();
        std::vector<ParameterVector> pts(g);
        std::vector<double> mass(g);
        for (std::uint32_t i = 0; i < g; ++i) {
            pts[i].mu1 = cur.get<double>();
            pts[i].mu2 = cur.get<double>();
            pts[i].sigma1 = cur.get<double>();
            pts[i].sigma2 = cur.get<double>();
            mass[i] = cur.get<double>();
        }
        t.prior = PriorGrid::from_points(std::move(pts), std::move(mass));
    } else {
        throw FileFormatError("policy file: unknown prior kind");
    }
    const auto digest = cur.get<std::uint64_t>();
    if (digest != prior_digest(t.prior)) {
        throw FileFormatError("policy file: prior digest mismatch");
    }

    t.t1_star_index = static_cast<int>(cur.get<std::uint32_t>());
    t.t1_star = cur.get<double>();
    t.root_value = cur.get<double>();

    // Rebuild the action set from the stored grid and window.
    {
        const long long i_lo = static_cast<long long>(
            std::ceil((t.config.t_lo - t.config.t_grid.origin) / t.config.t_grid.step - 1e-9));
        const long long i_hi = static_cast<long long>(
            std::floor((t.config.t_hi - t.config.t_grid.origin) / t.config.t_grid.step + 1e-9));
        for (long long i = i_lo; i <= i_hi; ++i) {
            t.thresholds.push_back(t.config.t_grid.value_at(i));
        }
        if (t.thresholds.size() != n_thresholds) {
            throw FileFormatError("policy file: threshold window inconsistent with grid");
        }
    }
    if (t.t1_star_index < 0 || t.t1_star_index >= static_cast<int>(t.thresholds.size())) {
        throw FileFormatError("policy file: first-read index out of range");
    }

    const auto n_stages = cur.get<std::uint32_t>();
    if (n_stages != static_cast<std::uint32_t>(std::max(0, t.config.horizon - 1))) {
        throw FileFormatError("policy file: stage count inconsistent with horizon");
    }
    t.stages.resize(n_stages);
    for (auto& st : t.stages) {
        const auto count = cur.get<std::uint64_t>();
        st.keys.resize(count);
        cur.get_bytes(st.keys.data(), count * sizeof(std::uint64_t));
        st.actions.resize(count);
        cur.get_bytes(st.actions.data(), count * sizeof(std::uint16_t));
        if (has_values) {
            st.values.resize(count);
            cur.get_bytes(st.values.data(), count * sizeof(double));
        }
    }
    if (cur.p != cur.end) {
        throw FileFormatError("policy file: trailing bytes");
    }
    return t;
}

// ---- execution ------------------------------------------------------------------------

PolicyExecution execute_policy(const PolicyTables& tables, const Reader& reader) {
    const int H = tables.config.horizon;
    if (tables.t1_star_index < 0 ||
        tables.t1_star_index >= static_cast<int>(tables.thresholds.size())) {
        throw PreconditionError("execute_policy: policy has no first read");
    }
    const double y_step = tables.config.y_grid.step;
    const int nY = static_cast<int>(std::floor(1.0 / y_step + 0.5)) + 1;

    PolicyExecution exec;
    std::vector<std::pair<int, int>> pairs;
    int action = tables.t1_star_index;
    for (int k = 1; k <= H; ++k) {
        ReadRecord r = reader(tables.thresholds[action]);
        exec.reads.push_back(r);
        const int y_idx = std::clamp(
            static_cast<int>(std::floor(std::clamp(r.y, 0.0, 1.0) / y_step + 0.5)), 0, nY - 1);
        pairs.emplace_back(action, y_idx);
        std::sort(pairs.begin(), pairs.end());
        if (k == H) break;

        const StageTable& st = tables.stages[k - 1];
        const std::uint64_t key = pack_sorted(pairs.data(), k);
        if (auto idx = st.find(key)) {
            action = st.actions[*idx];
            continue;
        }
        // Nearest stored state with the same threshold multiset (L1 on y).
        const std::uint64_t t_part = key >> (8 * k);
        const std::uint64_t lo = t_part << (8 * k);
        const std::uint64_t hi = lo + ((1ULL << (8 * k)) - 1);
        auto first = std::lower_bound(st.keys.begin(), st.keys.end(), lo);
        auto last = std::upper_bound(st.keys.begin(), st.keys.end(), hi);
        if (first == last) {
            throw Error("execute_policy: observed history outside policy support");
        }
        long best_dist = std::numeric_limits<long>::max();
        std::size_t best_idx = 0;
        for (auto it = first; it != last; ++it) {
            long dist = 0;
            for (int i = 0; i < k; ++i) {
                const int ya = static_cast<int>((*it >> (8 * i)) & 0xff);
                const int yb = static_cast<int>((key >> (8 * i)) & 0xff);
                dist += std::abs(ya - yb);
            }
            if (dist < best_dist) {
                best_dist = dist;
                best_idx = static_cast<std::size_t>(it - st.keys.begin());
            }
        }
        ++exec.fallback_lookups;
        std::fprintf(stderr,
                     "flashread: policy fallback at read %d (history off-table, L1 distance %ld)\n",
                     k + 1, best_dist);
        action = st.actions[best_idx];
    }

    try {
        exec.estimate = estimate_from_reads(exec.reads, tables.config.known);
    } catch (const Error& e) {
        exec.estimate_error = e.what();
    }
    return exec;
}

}  // namespace flashread
