// Command-line harness for the flash read-channel toolkit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flashread/digest.hpp"
#include "flashread/harness.hpp"
#include "flashread/rng.hpp"

namespace fr = flashread;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

struct ModelOpts {
    std::string preset = "fresh";
    std::string file;

    fr::VoltageModel resolve() const {
        if (!file.empty()) return fr::load_model(file);
        if (preset == "fresh") return fr::fresh_page_model();
        if (preset == "worn") return fr::worn_page_model();
        throw fr::ConfigError("unknown model preset '" + preset + "'");
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", file, "Voltage model file");
        cmd->add_option("--preset", preset, "Model preset: fresh | worn")
            ->check(CLI::IsMember({"fresh", "worn"}));
    }
};

struct NoiseOpts {
    double amplitude = 0.02;
    bool noiseless = false;
    double quantize_y = 0.0;

    fr::ReadNoiseModel resolve() const {
        fr::ReadNoiseModel m = noiseless ? fr::ReadNoiseModel::noiseless()
                                         : fr::ReadNoiseModel::uniform(-amplitude, amplitude);
        if (quantize_y > 0.0) m.y_quantization = fr::QuantizationGrid{0.0, quantize_y};
        return m;
    }

    void attach(CLI::App* cmd) {
        cmd->add_option("--noise-amp", amplitude, "Uniform read-noise amplitude (default 0.02)");
        cmd->add_flag("--noiseless", noiseless, "Disable read noise");
        cmd->add_option("--quantize-y", quantize_y, "Quantize observed y to this step");
    }
};

ordered_json estimate_json(const fr::ParameterEstimate& est) {
    ordered_json j;
    j["mu1_hat"] = est.mu1_hat;
    j["sigma1_hat"] = est.sigma1_hat;
    j["mu2_hat"] = est.mu2_hat;
    j["sigma2_hat"] = est.sigma2_hat;
    j["t_star_hat"] = est.t_star_hat;
    return j;
}

ordered_json reads_json(const std::vector<fr::ReadRecord>& reads) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : reads) arr.push_back({{"t", r.t}, {"y", r.y}});
    return arr;
}

int run(int argc, char** argv) {
    CLI::App app{"flashread: NAND read-channel simulation, estimation and read policies"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "flashread 0.1.0");

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "Simulate threshold reads");
    ModelOpts sim_model;
    NoiseOpts sim_noise;
    std::vector<double> sim_thresholds;
    int sim_trials = 1;
    std::uint64_t sim_seed = 1;
    std::string sim_out;
    sim_model.attach(sim);
    sim_noise.attach(sim);
    sim->add_option("--thresholds", sim_thresholds, "Read thresholds")->required();
    sim->add_option("--trials", sim_trials, "Trials");
    sim->add_option("--seed", sim_seed, "Master seed");
    sim->add_option("--out", sim_out, "Output CSV path (stdout if omitted)");

    // ---- estimate ----
    auto* est_cmd = app.add_subcommand("estimate", "Run the progressive read estimator once");
    ModelOpts est_model;
    NoiseOpts est_noise;
    std::uint64_t est_seed = 1;
    est_model.attach(est_cmd);
    est_noise.attach(est_cmd);
    est_cmd->add_option("--seed", est_seed, "Seed");

    // ---- propagation ----
    auto* prop = app.add_subcommand("propagation", "Read-noise error-propagation sweep");
    ModelOpts prop_model;
    std::vector<double> prop_amps;
    int prop_trials = 1000;
    std::uint64_t prop_seed = 1;
    std::string prop_out = "out/propagation";
    prop_model.attach(prop);
    prop->add_option("--amplitudes", prop_amps, "Noise amplitudes (default 1e-4..1e-2)");
    prop->add_option("--trials", prop_trials, "Trials per amplitude");
    prop->add_option("--seed", prop_seed, "Master seed");
    prop->add_option("--out", prop_out, "Output directory");

    // ---- table1 ----
    auto* tab = app.add_subcommand("table1", "Hard-decoder failure-rate grid");
    fr::Table1Config tab_cfg;
    tab_cfg.out_dir = "out/table1";
    tab->add_option("--N", tab_cfg.N, "Codeword length");
    tab->add_option("--alphas", tab_cfg.alphas, "Correctable error counts");
    tab->add_option("--pes", tab_cfg.p_es, "Bit error probabilities");
    tab->add_option("--out", tab_cfg.out_dir, "Output directory");

    // ---- capacity ----
    auto* cap = app.add_subcommand("capacity", "Mutual information / mismatched bound report");
    ModelOpts cap_model;
    NoiseOpts cap_noise;
    std::vector<double> cap_thresholds;
    std::vector<double> cap_est_params;
    std::uint64_t cap_seed = 1;
    std::string cap_out;
    cap_model.attach(cap);
    cap_noise.attach(cap);
    cap->add_option("--thresholds", cap_thresholds, "Read thresholds (default: from estimation reads)");
    cap->add_option("--est", cap_est_params,
                    "Estimated mu1,sigma1,mu2,sigma2 (default: run the estimator)")
        ->expected(4);
    cap->add_option("--seed", cap_seed, "Seed");
    cap->add_option("--out", cap_out, "Output JSON path (stdout if omitted)");

    // ---- policy ----
    auto* pol = app.add_subcommand("policy", "Read-threshold policies");
    pol->require_subcommand(1);

    auto* pol_build = pol->add_subcommand("build", "Build a policy by backward recursion");
    std::string pb_preset = "sec6-ci";
    int pb_points = 0;
    double pb_window_lo = 0.0, pb_window_hi = 0.0;
    std::string pb_reward = "soft";
    int pb_horizon = 4;
    int pb_threads = 0;
    bool pb_no_values = false;
    std::string pb_out;
    pol_build->add_option("--dp-preset", pb_preset, "Discretization preset: sec6-default | sec6-ci")
        ->check(CLI::IsMember({"sec6-default", "sec6-ci"}));
    pol_build->add_option("--points-per-param", pb_points, "Prior grid points per parameter");
    pol_build->add_option("--t-window-lo", pb_window_lo, "Threshold window low end");
    pol_build->add_option("--t-window-hi", pb_window_hi, "Threshold window high end");
    pol_build->add_option("--reward", pb_reward, "Reward: soft | hard")
        ->check(CLI::IsMember({"soft", "hard"}));
    pol_build->add_option("--horizon", pb_horizon, "Number of reads");
    pol_build->add_option("--threads", pb_threads, "Worker threads (0 = auto)");
    pol_build->add_flag("--no-values", pb_no_values, "Drop value tables from the file");
    pol_build->add_option("--out", pb_out, "Policy file path")->required();

    auto* pol_show = pol->add_subcommand("show", "Summarize a policy file");
    std::string ps_file;
    pol_show->add_option("--policy", ps_file, "Policy file")->required();

    auto* pol_run = pol->add_subcommand("run", "Execute a policy against a simulated page");
    ModelOpts pr_model;
    std::string pr_file;
    int pr_trials = 1;
    std::uint64_t pr_seed = 1;
    double pr_noise_amp = 0.02;
    bool pr_noiseless = false;
    pr_model.attach(pol_run);
    pol_run->add_option("--policy", pr_file, "Policy file")->required();
    pol_run->add_option("--trials", pr_trials, "Trials");
    pol_run->add_option("--seed", pr_seed, "Master seed");
    pol_run->add_option("--noise-amp", pr_noise_amp, "Uniform read-noise amplitude");
    pol_run->add_flag("--noiseless", pr_noiseless, "Disable read noise");

    // ---- ldpc ----
    auto* ldpc = app.add_subcommand("ldpc", "LDPC code construction and decoding");
    ldpc->require_subcommand(1);

    auto* ldpc_build = ldpc->add_subcommand("build", "Build a regular parity-check code");
    int lb_n = 4096, lb_col = 3, lb_row = 17;
    std::uint64_t lb_seed = 7;
    std::string lb_out;
    ldpc_build->add_option("--n", lb_n, "Codeword length");
    ldpc_build->add_option("--col-weight", lb_col, "Variable degree");
    ldpc_build->add_option("--row-weight", lb_row, "Check degree");
    ldpc_build->add_option("--seed", lb_seed, "Seed");
    ldpc_build->add_option("--out", lb_out, "Code file path")->required();

    auto* ldpc_dec = ldpc->add_subcommand("decode", "Min-sum decode a channel LLR file");
    std::string ld_code, ld_llrs;
    int ld_iters = 20;
    ldpc_dec->add_option("--code", ld_code, "Code file")->required();
    ldpc_dec->add_option("--llrs", ld_llrs, "Text file with one LLR per line")->required();
    ldpc_dec->add_option("--max-iters", ld_iters, "Decoder iterations");

    // ---- compare ----
    auto* cmp = app.add_subcommand("compare", "Strategy comparison (estimation + LDPC)");
    ModelOpts cmp_model;
    cmp_model.preset = "worn";
    std::vector<std::string> cmp_strats = {"S1", "S2", "S3"};
    std::string cmp_policy;
    int cmp_trials = 5000, cmp_ldpc_trials = 500;
    int cmp_n = 4096, cmp_col = 3, cmp_row = 17, cmp_iters = 20;
    std::uint64_t cmp_seed = 1;
    int cmp_threads = 0;
    std::string cmp_out = "out/compare";
    std::vector<double> cmp_custom;
    cmp_model.attach(cmp);
    cmp->add_option("--strategies", cmp_strats, "Strategies: S1, S2, S3, custom");
    cmp->add_option("--policy", cmp_policy, "Policy file backing S3");
    cmp->add_option("--custom-thresholds", cmp_custom, "Thresholds for the 'custom' strategy");
    cmp->add_option("--trials", cmp_trials, "Estimation trials");
    cmp->add_option("--ldpc-trials", cmp_ldpc_trials, "LDPC trials per strategy");
    cmp->add_option("--code-n", cmp_n, "LDPC codeword length");
    cmp->add_option("--col-weight", cmp_col, "LDPC variable degree");
    cmp->add_option("--row-weight", cmp_row, "LDPC check degree");
    cmp->add_option("--iterations", cmp_iters, "Min-sum iterations");
    cmp->add_option("--seed", cmp_seed, "Master seed");
    cmp->add_option("--threads", cmp_threads, "Worker threads (0 = auto)");
    cmp->add_option("--out", cmp_out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) {
        fr::VoltageModel model = sim_model.resolve();
        fr::ReadNoiseModel noise = sim_noise.resolve();
        std::string csv = "trial,threshold,y\n";
        for (int ti = 0; ti < sim_trials; ++ti) {
            fr::Rng rng(fr::derive_seed(sim_seed, ti));
            for (double t : sim_thresholds) {
                fr::ReadRecord r = fr::read(model, t, noise, rng);
                csv += std::to_string(ti) + "," + fmt(r.t) + "," + fmt(r.y) + "\n";
            }
        }
        if (sim_out.empty()) {
            std::cout << csv;
        } else {
            std::ofstream(sim_out) << csv;
        }
        return 0;
    }

    if (est_cmd->parsed()) {
        fr::VoltageModel model = est_model.resolve();
        fr::ReadNoiseModel noise = est_noise.resolve();
        fr::Rng rng(est_seed);
        fr::ProgressiveResult res =
            fr::progressive_read([&](double t) { return fr::read(model, t, noise, rng); });
        ordered_json j;
        j["reads"] = reads_json(res.reads);
        j["estimate"] = estimate_json(res.estimate);
        j["t_star_true"] = fr::optimal_threshold(model);
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (prop->parsed()) {
        fr::PropagationConfig cfg;
        cfg.model = prop_model.resolve();
        cfg.amplitudes = prop_amps;
        cfg.trials_per_amplitude = prop_trials;
        cfg.seed = prop_seed;
        cfg.out_dir = prop_out;
        fr::PropagationResult res = fr::run_error_propagation(cfg);
        std::printf("slopes: mu=%.3f sigma=%.3f t*=%.3f ber_excess=%.3f\n", res.slope_mu,
                    res.slope_sigma, res.slope_tstar, res.slope_ber);
        return 0;
    }

    if (tab->parsed()) {
        auto cells = fr::run_table1(tab_cfg);
        std::printf("%6s %8s %10s %10s %10s\n", "alpha", "p_e", "gaussian", "poisson", "exact");
        for (const auto& c : cells) {
            std::printf("%6lld %8.4f %10.4f %10.4f %10.4f\n", static_cast<long long>(c.alpha),
                        c.p_e, c.gaussian, c.poisson, c.exact);
        }
        return 0;
    }

    if (cap->parsed()) {
        fr::VoltageModel model = cap_model.resolve();
        fr::ReadNoiseModel noise = cap_noise.resolve();
        fr::Rng rng(cap_seed);
        fr::ParameterEstimate est;
        std::vector<fr::ReadRecord> reads;
        if (cap_est_params.size() == 4) {
            est.mu1_hat = cap_est_params[0];
            est.sigma1_hat = cap_est_params[1];
            est.mu2_hat = cap_est_params[2];
            est.sigma2_hat = cap_est_params[3];
            est.t_star_hat = fr::estimate_t_star(est.mu1_hat, est.sigma1_hat, est.mu2_hat,
                                                 est.sigma2_hat);
        } else {
            fr::ProgressiveResult res = fr::progressive_read(
                [&](double t) { return fr::read(model, t, noise, rng); });
            est = res.estimate;
            reads = res.reads;
        }
        std::vector<double> thresholds = cap_thresholds;
        if (thresholds.empty()) {
            for (const auto& r : reads) thresholds.push_back(r.t);
        }
        if (thresholds.empty()) {
            throw fr::ConfigError("capacity: provide --thresholds or let the estimator read");
        }
        fr::CapacityReport rep = fr::make_capacity_report(model, est, thresholds);
        ordered_json j;
        j["thresholds"] = rep.thresholds;
        j["llr"] = rep.llr.llr;
        j["mutual_information_bits"] = rep.mutual_information;
        j["mismatched_bound_bits"] = rep.mismatched_bound;
        j["kl_divergence_bits"] = rep.kl_divergence;
        j["estimate"] = estimate_json(est);
        if (cap_out.empty()) {
            std::cout << j.dump(2) << "\n";
        } else {
            std::ofstream(cap_out) << j.dump(2) << "\n";
        }
        return 0;
    }

    if (pol_build->parsed()) {
        fr::PolicyBuildConfig cfg;
        int points = pb_points > 0 ? pb_points : (pb_preset == "sec6-default" ? 5 : 3);
        cfg.prior = fr::standard_prior(points);
        cfg.dp = fr::standard_dp_config();
        if (pb_preset == "sec6-ci" && pb_window_lo == 0.0 && pb_window_hi == 0.0) {
            cfg.dp.t_lo = 0.67;
            cfg.dp.t_hi = 2.27;
        }
        if (pb_window_lo != 0.0) cfg.dp.t_lo = pb_window_lo;
        if (pb_window_hi != 0.0) cfg.dp.t_hi = pb_window_hi;
        cfg.dp.reward.kind =
            pb_reward == "soft" ? fr::RewardSpec::Kind::soft : fr::RewardSpec::Kind::hard;
        cfg.dp.horizon = pb_horizon;
        cfg.dp.threads = pb_threads;
        cfg.out_file = pb_out;
        cfg.include_values = !pb_no_values;
        fr::PolicyTables tables = fr::run_policy_build(cfg);
        std::printf("policy built: t1*=%.4f (index %d), root value %.6f bits\n", tables.t1_star,
                    tables.t1_star_index, tables.root_value);
        for (std::size_t k = 0; k < tables.stages.size(); ++k) {
            std::printf("  stage %zu: %zu states\n", k + 2, tables.stages[k].keys.size());
        }
        return 0;
    }

    if (pol_show->parsed()) {
        fr::PolicyTables t = fr::load_policy(ps_file);
        std::printf("policy: horizon %d, reward %s, t1* = %.4f\n", t.config.horizon,
                    t.config.reward.kind == fr::RewardSpec::Kind::soft ? "soft" : "hard",
                    t.t1_star);
        std::printf("thresholds: %zu on grid origin %.3f step %.3f, window [%.3f, %.3f]\n",
                    t.thresholds.size(), t.config.t_grid.origin, t.config.t_grid.step,
                    t.config.t_lo, t.config.t_hi);
        for (std::size_t k = 0; k < t.stages.size(); ++k) {
            std::printf("stage %zu: %zu states\n", k + 2, t.stages[k].keys.size());
        }
        // Second-read policy for the reachable first-read states.
        if (!t.stages.empty()) {
            const fr::StageTable& st = t.stages[0];
            std::printf("pi_2 for t1 = %.4f:\n", t.t1_star);
            for (std::size_t i = 0; i < st.keys.size(); ++i) {
                const int t_idx = static_cast<int>(st.keys[i] >> 8);
                const int y_idx = static_cast<int>(st.keys[i] & 0xff);
                if (t_idx != t.t1_star_index) continue;
                std::printf("  y1 = %.2f -> t2 = %.4f\n", y_idx * t.config.y_grid.step,
                            t.thresholds[st.actions[i]]);
            }
        }
        return 0;
    }

    if (pol_run->parsed()) {
        fr::PolicyTables tables = fr::load_policy(pr_file);
        fr::VoltageModel model = pr_model.resolve();
        fr::ReadNoiseModel noise = pr_noiseless
                                       ? fr::ReadNoiseModel::noiseless()
                                       : fr::ReadNoiseModel::uniform(-pr_noise_amp, pr_noise_amp);
        for (int ti = 0; ti < pr_trials; ++ti) {
            fr::Rng rng(fr::derive_seed(pr_seed, ti));
            fr::PolicyExecution exec = fr::execute_policy(
                tables, [&](double t) { return fr::read(model, t, noise, rng); });
            ordered_json j;
            j["trial"] = ti;
            j["reads"] = reads_json(exec.reads);
            if (exec.estimate) {
                j["estimate"] = estimate_json(*exec.estimate);
            } else {
                j["estimate_error"] = exec.estimate_error;
            }
            j["fallback_lookups"] = exec.fallback_lookups;
            std::cout << j.dump(2) << "\n";
        }
        return 0;
    }

    if (ldpc_build->parsed()) {
        fr::CodeSpec code = fr::build_regular_code(lb_n, lb_col, lb_row, lb_seed);
        fr::save_code(code, lb_out);
        std::printf("code: n=%d m=%d rank=%d rate=%.4f\n", code.n, code.m, code.rank,
                    code.rate());
        return 0;
    }

    if (ldpc_dec->parsed()) {
        fr::CodeSpec code = fr::load_code(ld_code);
        code.max_iterations = ld_iters;
        std::ifstream in(ld_llrs);
        if (!in) throw fr::FileFormatError("cannot open " + ld_llrs);
        std::vector<double> llrs;
        double v;
        while (in >> v) llrs.push_back(v);
        fr::DecodeResult res = fr::min_sum_decode(code, llrs);
        std::printf("converged=%d iterations=%d\n", res.converged ? 1 : 0, res.iterations);
        return res.converged ? 0 : 1;
    }

    if (cmp->parsed()) {
        fr::CompareConfig cfg;
        cfg.model = cmp_model.resolve();
        for (const std::string& name : cmp_strats) {
            if (name == "S1") {
                cfg.strategies.push_back(fr::s1_strategy());
            } else if (name == "S2") {
                cfg.strategies.push_back(fr::s2_strategy());
            } else if (name == "S3") {
                if (cmp_policy.empty()) {
                    throw fr::ConfigError("compare: S3 requires --policy");
                }
                cfg.strategies.push_back(
                    {fr::StrategySpec::Kind::policy, "S3", {}, cmp_policy});
            } else if (name == "custom") {
                if (cmp_custom.empty()) {
                    throw fr::ConfigError("compare: custom strategy needs --custom-thresholds");
                }
                std::vector<double> ts = cmp_custom;
                std::sort(ts.begin(), ts.end());
                cfg.strategies.push_back({fr::StrategySpec::Kind::fixed, "custom", ts, ""});
            } else {
                throw fr::ConfigError("compare: unknown strategy '" + name + "'");
            }
        }
        cfg.trials = cmp_trials;
        cfg.ldpc_trials = cmp_ldpc_trials;
        cfg.code_n = cmp_n;
        cfg.code_col_weight = cmp_col;
        cfg.code_row_weight = cmp_row;
        cfg.ldpc_iterations = cmp_iters;
        cfg.seed = cmp_seed;
        cfg.threads = cmp_threads;
        cfg.out_dir = cmp_out;
        fr::CompareResult res = fr::run_strategy_comparison(cfg);
        std::printf("%-8s %12s %12s %12s %12s %10s %10s %10s\n", "strategy", "mu_rel",
                    "sigma_rel", "tstar_rel", "ber_excess", "est_fail", "ldpc_est",
                    "ldpc_genie");
        for (const auto& row : res.rows) {
            std::printf("%-8s %12.5g %12.5g %12.5g %12.5g %10.4f %10.4f %10.4f\n",
                        row.name.c_str(), row.median_mu_rel, row.median_sigma_rel,
                        row.median_tstar_rel, row.median_ber_excess,
                        row.estimate_failure_rate, row.ldpc_failure_est,
                        row.ldpc_failure_genie);
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const fr::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
