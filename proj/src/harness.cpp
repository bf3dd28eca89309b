#include "flashread/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "flashread/digest.hpp"
#include "flashread/parallel.hpp"
#include "flashread/rng.hpp"

namespace flashread {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileFormatError("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace

VoltageModel fresh_page_model() { return VoltageModel::slc(1.0, 0.12, 2.0, 0.22); }
VoltageModel worn_page_model() { return VoltageModel::slc(1.0, 0.18, 2.0, 0.32); }

PriorGrid standard_prior(int points_per_param) {
    return PriorGrid::uniform_product({0.75, 1.25, points_per_param},
                                      {1.8, 2.1, points_per_param},
                                      {0.1, 0.24, points_per_param},
                                      {0.2, 0.36, points_per_param});
}

DpConfig standard_dp_config() {
    DpConfig cfg;
    cfg.t_grid = QuantizationGrid{0.03, 0.04};
    cfg.t_lo = 0.55;
    cfg.t_hi = 2.35;
    cfg.y_grid = QuantizationGrid{0.0, 0.04};
    cfg.noise = ReadNoiseModel::uniform(-0.02, 0.02);
    cfg.reward.kind = RewardSpec::Kind::soft;
    cfg.horizon = 4;
    return cfg;
}

StrategySpec s1_strategy() {
    return {StrategySpec::Kind::fixed, "S1", {0.85, 1.15, 1.75, 2.125}, ""};
}

StrategySpec s2_strategy() {
    return {StrategySpec::Kind::fixed, "S2", {1.2, 1.35, 1.45, 1.6}, ""};
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw ConfigError("log_log_slope: need at least two points");
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(std::max(x[i], 1e-300));
        const double ly = std::log(std::max(y[i], 1e-300));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string hex_digest(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_manifest(const std::string& out_dir, const std::string& command, std::uint64_t seed,
                    const std::string& config_digest, const std::vector<std::string>& outputs) {
    ordered_json j;
    j["tool"] = "flashread";
    j["version"] = "0.1.0";
    j["command"] = command;
    j["seed"] = seed;
    j["config_hash"] = config_digest;
    j["outputs"] = outputs;
    write_text_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

// ---- strategy comparison ------------------------------------------------------------

namespace {

struct TrialMetrics {
    double mu_rel = kInf;
    double sigma_rel = kInf;
    double tstar_rel = kInf;
    double ber_excess = kInf;
    bool failed = true;
};

TrialMetrics metrics_from_estimate(const ParameterEstimate& est, const VoltageModel& truth,
                                   double t_star, double ber_star) {
    TrialMetrics m;
    m.failed = false;
    const double mu1 = truth.level(0).mu, s1 = truth.level(0).scale;
    const double mu2 = truth.level(1).mu, s2 = truth.level(1).scale;
    m.mu_rel = 0.5 * (std::abs(est.mu1_hat - mu1) / mu1 + std::abs(est.mu2_hat - mu2) / mu2);
    m.sigma_rel =
        0.5 * (std::abs(est.sigma1_hat - s1) / s1 + std::abs(est.sigma2_hat - s2) / s2);
    m.tstar_rel = std::abs(est.t_star_hat - t_star) / t_star;
    m.ber_excess = (ber(truth, est.t_star_hat) - ber_star) / ber_star;
    return m;
}

// One estimation trial against the analytic read channel.
TrialMetrics estimation_trial(const StrategySpec& strat, const PolicyTables* policy,
                              const VoltageModel& model, const ReadNoiseModel& noise,
                              double t_star, double ber_star, Rng& rng) {
    try {
        std::optional<ParameterEstimate> est;
        if (strat.kind == StrategySpec::Kind::fixed) {
            std::vector<ReadRecord> reads;
            reads.reserve(strat.thresholds.size());
            for (double t : strat.thresholds) reads.push_back(read(model, t, noise, rng));
            est = estimate_from_reads(std::move(reads), {});
        } else {
            PolicyExecution exec = execute_policy(
                *policy, [&](double t) { return read(model, t, noise, rng); });
            if (!exec.estimate) return {};
            est = *exec.estimate;
        }
        return metrics_from_estimate(*est, model, t_star, ber_star);
    } catch (const Error&) {
        return {};
    }
}

struct LdpcTrialResult {
    bool est_failed = true;
    bool genie_failed = true;
};

LdpcTrialResult ldpc_trial(const StrategySpec& strat, const PolicyTables* policy,
                           const VoltageModel& model, const ReadNoiseModel& noise,
                           const CodeSpec& code, Rng& cell_rng, Rng& read_rng) {
    LdpcTrialResult out;
    // Random codeword through the cell array.
    std::vector<std::uint8_t> message(code.message_length());
    for (auto& b : message) b = static_cast<std::uint8_t>(cell_rng.next_u64() & 1);
    const std::vector<std::uint8_t> codeword = encode(code, message);
    const CellArray cells = program_cells(model, codeword, cell_rng);

    // Reads on the cells.
    std::vector<ReadRecord> reads;
    std::optional<ParameterEstimate> est;
    try {
        if (strat.kind == StrategySpec::Kind::fixed) {
            for (double t : strat.thresholds) {
                reads.push_back(read_cells(cells, t, noise, read_rng));
            }
            est = estimate_from_reads(reads, {});
        } else {
            PolicyExecution exec = execute_policy(
                *policy, [&](double t) { return read_cells(cells, t, noise, read_rng); });
            reads = exec.reads;
            if (exec.estimate) est = *exec.estimate;
        }
    } catch (const Error&) {
        est.reset();
    }

    // Distinct sorted read thresholds define the soft-read intervals.
    std::vector<double> d;
    for (const auto& r : reads) d.push_back(r.t);
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    if (d.empty()) return out;

    const std::vector<int> intervals = classify_cells(cells, d);

    auto decode_with = [&](const LLRTable& table) {
        std::vector<double> llrs(cells.bits.size());
        for (std::size_t i = 0; i < llrs.size(); ++i) {
            // Flash convention is log(p1/p2) for bit 1; the decoder wants
            // log(P0/P1), so flip the sign.
            llrs[i] = -table.llr[intervals[i]];
        }
        DecodeResult res = min_sum_decode(code, llrs);
        return !(res.converged && res.bits == codeword);
    };

    out.genie_failed = decode_with(llr_table(transition_matrix(model, d)));
    if (est) {
        try {
            VoltageModel est_model =
                VoltageModel::slc(est->mu1_hat, est->sigma1_hat, est->mu2_hat, est->sigma2_hat);
            out.est_failed = decode_with(llr_table(transition_matrix(est_model, d)));
        } catch (const Error&) {
            out.est_failed = true;  // unusable estimate: soft decoding impossible
        }
    }
    return out;
}

}  // namespace

CompareResult run_strategy_comparison(const CompareConfig& config) {
    if (config.trials < 1 || config.ldpc_trials < 0) {
        throw ConfigError("run_strategy_comparison: trials must be positive");
    }
    for (const auto& s : config.strategies) {
        if (s.kind == StrategySpec::Kind::fixed) {
            if (s.thresholds.empty() ||
                !std::is_sorted(s.thresholds.begin(), s.thresholds.end())) {
                throw ConfigError("strategy " + s.name + ": thresholds must be sorted");
            }
        }
    }

    const double t_star = optimal_threshold(config.model);
    const double ber_star = ber(config.model, t_star);

    // Load policies once.
    std::vector<std::optional<PolicyTables>> policies(config.strategies.size());
    for (std::size_t si = 0; si < config.strategies.size(); ++si) {
        if (config.strategies[si].kind == StrategySpec::Kind::policy) {
            policies[si] = load_policy(config.strategies[si].policy_file);
        }
    }

    CodeSpec code;
    if (config.ldpc_trials > 0) {
        code = build_regular_code(config.code_n, config.code_col_weight, config.code_row_weight,
                                  config.code_seed);
        code.max_iterations = config.ldpc_iterations;
    }

    CompareResult result;
    result.code_rate = config.ldpc_trials > 0 ? code.rate() : 0.0;

    for (std::size_t si = 0; si < config.strategies.size(); ++si) {
        const StrategySpec& strat = config.strategies[si];
        const PolicyTables* policy = policies[si] ? &*policies[si] : nullptr;

        std::vector<TrialMetrics> trials(config.trials);
        const std::uint64_t est_stream = derive_seed(config.seed, 0x1000 + si);
        parallel_for(config.trials, config.threads, [&](std::size_t ti) {
            Rng rng(derive_seed(est_stream, ti));
            trials[ti] = estimation_trial(strat, policy, config.model, config.estimation_noise,
                                          t_star, ber_star, rng);
        });

        StrategyMetrics row;
        row.name = strat.name;
        std::vector<double> mu, sg, ts, bx;
        int failures = 0;
        for (const auto& t : trials) {
            mu.push_back(t.mu_rel);
            sg.push_back(t.sigma_rel);
            ts.push_back(t.tstar_rel);
            bx.push_back(t.ber_excess);
            failures += t.failed ? 1 : 0;
        }
        row.median_mu_rel = median(std::move(mu));
        row.median_sigma_rel = median(std::move(sg));
        row.median_tstar_rel = median(std::move(ts));
        row.median_ber_excess = median(std::move(bx));
        row.estimate_failure_rate = static_cast<double>(failures) / config.trials;

        if (config.ldpc_trials > 0) {
            std::vector<LdpcTrialResult> lt(config.ldpc_trials);
            const std::uint64_t cell_stream = derive_seed(config.seed, 0x2000);
            const std::uint64_t read_stream = derive_seed(config.seed, 0x3000 + si);
            parallel_for(config.ldpc_trials, config.threads, [&](std::size_t ti) {
                // Cells are shared across strategies (same stream) so the
                // comparison is paired; reads use per-strategy streams.
                Rng cell_rng(derive_seed(cell_stream, ti));
                Rng read_rng(derive_seed(read_stream, ti));
                lt[ti] = ldpc_trial(strat, policy, config.model, config.ldpc_noise, code,
                                    cell_rng, read_rng);
            });
            int est_fail = 0, genie_fail = 0;
            for (const auto& t : lt) {
                est_fail += t.est_failed ? 1 : 0;
                genie_fail += t.genie_failed ? 1 : 0;
            }
            row.ldpc_failure_est = static_cast<double>(est_fail) / config.ldpc_trials;
            row.ldpc_failure_genie = static_cast<double>(genie_fail) / config.ldpc_trials;
        }
        result.rows.push_back(std::move(row));
    }

    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        std::string csv = "strategy,metric,value\n";
        ordered_json j;
        j["model"] = {{"mu1", config.model.level(0).mu},
                      {"sigma1", config.model.level(0).scale},
                      {"mu2", config.model.level(1).mu},
                      {"sigma2", config.model.level(1).scale}};
        j["trials"] = config.trials;
        j["ldpc_trials"] = config.ldpc_trials;
        j["code_rate"] = result.code_rate;
        ordered_json asj = ordered_json::object();
        for (const auto& row : result.rows) {
            const std::pair<std::string, double> metrics[] = {
                {"median_mu_rel", row.median_mu_rel},
                {"median_sigma_rel", row.median_sigma_rel},
                {"median_tstar_rel", row.median_tstar_rel},
                {"median_ber_excess", row.median_ber_excess},
                {"estimate_failure_rate", row.estimate_failure_rate},
                {"ldpc_failure_est", row.ldpc_failure_est},
                {"ldpc_failure_genie", row.ldpc_failure_genie},
            };
            ordered_json sj = ordered_json::object();
            for (const auto& [name, value] : metrics) {
                csv += row.name + "," + name + "," + fmt(value) + "\n";
                sj[name] = std::isfinite(value) ? ordered_json(value) : ordered_json("inf");
            }
            asj[row.name] = sj;
        }
        j["strategies"] = asj;
        write_text_file(config.out_dir + "/compare.csv", csv);
        write_text_file(config.out_dir + "/compare.json", j.dump(2) + "\n");

        std::string cfg_str = "compare;trials=" + std::to_string(config.trials) +
                              ";ldpc=" + std::to_string(config.ldpc_trials) +
                              ";n=" + std::to_string(config.code_n) + ";model=" +
                              fmt(config.model.level(0).mu) + "," +
                              fmt(config.model.level(0).scale) + "," +
                              fmt(config.model.level(1).mu) + "," +
                              fmt(config.model.level(1).scale);
        write_manifest(config.out_dir, "compare", config.seed,
                       hex_digest(fnv1a_string(cfg_str)), {"compare.csv", "compare.json"});
    }
    return result;
}

// ---- error propagation ------------------------------------------------------------

PropagationResult run_error_propagation(const PropagationConfig& config) {
    std::vector<double> amplitudes = config.amplitudes;
    if (amplitudes.empty()) {
        // Log-spaced decades from 1e-4 to 1e-2.
        for (int i = 0; i <= 8; ++i) amplitudes.push_back(1e-4 * std::pow(10.0, i / 4.0));
    }
    if (amplitudes.size() < 3) {
        throw ConfigError("run_error_propagation: need at least 3 amplitudes");
    }
    if (config.trials_per_amplitude < 1) {
        throw ConfigError("run_error_propagation: trials_per_amplitude must be positive");
    }

    const double t_star = optimal_threshold(config.model);
    const double ber_star = ber(config.model, t_star);

    PropagationResult result;
    for (std::size_t ai = 0; ai < amplitudes.size(); ++ai) {
        const double amp = amplitudes[ai];
        const ReadNoiseModel noise = ReadNoiseModel::uniform(-amp, amp);
        std::vector<TrialMetrics> trials(config.trials_per_amplitude);
        const std::uint64_t stream = derive_seed(config.seed, 0x5000 + ai);
        parallel_for(config.trials_per_amplitude, config.threads, [&](std::size_t ti) {
            Rng rng(derive_seed(stream, ti));
            try {
                ProgressiveResult pr = progressive_read(
                    [&](double t) { return read(config.model, t, noise, rng); });
                trials[ti] = metrics_from_estimate(pr.estimate, config.model, t_star, ber_star);
            } catch (const Error&) {
                trials[ti] = {};
            }
        });
        PropagationResult::Row row;
        row.amplitude = amp;
        std::vector<double> mu, sg, ts, bx;
        for (const auto& t : trials) {
            mu.push_back(t.mu_rel);
            sg.push_back(t.sigma_rel);
            ts.push_back(t.tstar_rel);
            bx.push_back(t.ber_excess);
        }
        row.med_mu_rel = median(std::move(mu));
        row.med_sigma_rel = median(std::move(sg));
        row.med_tstar_rel = median(std::move(ts));
        row.med_ber_excess = median(std::move(bx));
        result.rows.push_back(row);
    }

    std::vector<double> xs, mu, sg, ts, bx;
    for (const auto& r : result.rows) {
        xs.push_back(r.amplitude);
        mu.push_back(r.med_mu_rel);
        sg.push_back(r.med_sigma_rel);
        ts.push_back(r.med_tstar_rel);
        bx.push_back(r.med_ber_excess);
    }
    result.slope_mu = log_log_slope(xs, mu);
    result.slope_sigma = log_log_slope(xs, sg);
    result.slope_tstar = log_log_slope(xs, ts);
    result.slope_ber = log_log_slope(xs, bx);

    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        std::string csv = "amplitude,median_mu_rel,median_sigma_rel,median_tstar_rel,median_ber_excess\n";
        for (const auto& r : result.rows) {
            csv += fmt(r.amplitude) + "," + fmt(r.med_mu_rel) + "," + fmt(r.med_sigma_rel) +
                   "," + fmt(r.med_tstar_rel) + "," + fmt(r.med_ber_excess) + "\n";
        }
        write_text_file(config.out_dir + "/propagation.csv", csv);
        ordered_json j;
        j["slope_mu"] = result.slope_mu;
        j["slope_sigma"] = result.slope_sigma;
        j["slope_tstar"] = result.slope_tstar;
        j["slope_ber_excess"] = result.slope_ber;
        write_text_file(config.out_dir + "/propagation_slopes.json", j.dump(2) + "\n");
        write_manifest(config.out_dir, "propagation", config.seed,
                       hex_digest(fnv1a_string("propagation;trials=" +
                                               std::to_string(config.trials_per_amplitude))),
                       {"propagation.csv", "propagation_slopes.json"});
    }
    return result;
}

// ---- hard-decoder failure grid --------------------------------------------------------

std::vector<Table1Cell> run_table1(const Table1Config& config) {
    std::vector<Table1Cell> cells;
    for (long long alpha : config.alphas) {
        for (double p_e : config.p_es) {
            CodewordErrorModel m{config.N, p_e, alpha};
            Table1Cell cell;
            cell.alpha = alpha;
            cell.p_e = p_e;
            cell.gaussian = failure_rate(m, TailApprox::gaussian);
            cell.poisson = failure_rate(m, TailApprox::poisson);
            cell.exact = failure_rate(m, TailApprox::exact);
            cells.push_back(cell);
        }
    }
    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        std::string csv = "alpha,p_e,gaussian,poisson,exact\n";
        for (const auto& c : cells) {
            csv += std::to_string(c.alpha) + "," + fmt(c.p_e) + "," + fmt(c.gaussian) + "," +
                   fmt(c.poisson) + "," + fmt(c.exact) + "\n";
        }
        write_text_file(config.out_dir + "/table1.csv", csv);
        write_manifest(config.out_dir, "table1", 0,
                       hex_digest(fnv1a_string("table1;N=" + std::to_string(config.N))),
                       {"table1.csv"});
    }
    return cells;
}

// ---- policy build ----------------------------------------------------------------------

PolicyTables run_policy_build(const PolicyBuildConfig& config) {
    PolicyTables tables = backward_recursion(config.prior, config.dp);
    if (!config.out_file.empty()) {
        std::filesystem::path p(config.out_file);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        save_policy(tables, config.out_file, config.include_values);
    }
    return tables;
}

CapacityReport make_capacity_report(const VoltageModel& truth, const ParameterEstimate& estimate,
                                    std::vector<double> thresholds) {
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const VoltageModel est_model = VoltageModel::slc(estimate.mu1_hat, estimate.sigma1_hat,
                                                     estimate.mu2_hat, estimate.sigma2_hat);
    const TransitionMatrix P = transition_matrix(truth, thresholds);
    const TransitionMatrix P_hat = transition_matrix(est_model, thresholds);
    CapacityReport rep;
    rep.thresholds = thresholds;
    rep.llr = llr_table(P_hat);
    rep.mutual_information = mutual_information(P);
    rep.mismatched_bound = mismatched_bound(P, P_hat);
    rep.kl_divergence = kl_divergence(P, P_hat);
    return rep;
}

}  // namespace flashread
