#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flashread/channel.hpp"
#include "flashread/errordist.hpp"
#include "flashread/estimation.hpp"
#include "flashread/infotheory.hpp"
#include "flashread/ldpc.hpp"
#include "flashread/policy.hpp"

namespace flashread {

// ---- shared experiment plumbing --------------------------------------------

// Canonical fresh / worn page models used across the experiments.
VoltageModel fresh_page_model();
VoltageModel worn_page_model();

// Default prior box and DP discretization for the policy experiments.
PriorGrid standard_prior(int points_per_param);
DpConfig standard_dp_config();

// ---- strategy comparison -----------------------------------------------------

struct StrategySpec {
    enum class Kind { fixed, policy };
    Kind kind = Kind::fixed;
    std::string name;
    std::vector<double> thresholds;  // fixed strategies
    std::string policy_file;         // policy strategies
};

StrategySpec s1_strategy();  // spread reads
StrategySpec s2_strategy();  // uncertainty-region reads

struct CompareConfig {
    VoltageModel model = fresh_page_model();
    std::vector<StrategySpec> strategies;
    int trials = 5000;
    int ldpc_trials = 500;
    std::uint64_t seed = 1;
    ReadNoiseModel estimation_noise = ReadNoiseModel::uniform(-0.02, 0.02);
    // Monte Carlo read pipeline for the LDPC runs; quantization keeps the
    // observations on the policy grid.
    ReadNoiseModel ldpc_noise =
        ReadNoiseModel::uniform(-0.02, 0.02).quantized(QuantizationGrid{0.0, 0.04});
    int code_n = 4096;
    int code_col_weight = 3;
    int code_row_weight = 17;
    int ldpc_iterations = 20;
    std::uint64_t code_seed = 7;
    int threads = 0;
    std::string out_dir;  // empty: no files written
};

struct StrategyMetrics {
    std::string name;
    // Medians over trials; failed estimations contribute +infinity.
    double median_mu_rel = 0.0;
    double median_sigma_rel = 0.0;
    double median_tstar_rel = 0.0;
    double median_ber_excess = 0.0;
    double estimate_failure_rate = 0.0;
    double ldpc_failure_est = 0.0;
    double ldpc_failure_genie = 0.0;
};

struct CompareResult {
    std::vector<StrategyMetrics> rows;
    double code_rate = 0.0;
};

CompareResult run_strategy_comparison(const CompareConfig& config);

// ---- error-propagation sweep ---------------------------------------------------

struct PropagationConfig {
    VoltageModel model = fresh_page_model();
    std::vector<double> amplitudes;  // empty: log-spaced 1e-4 .. 1e-2
    int trials_per_amplitude = 1000;
    std::uint64_t seed = 1;
    int threads = 0;
    std::string out_dir;
};

struct PropagationResult {
    struct Row {
        double amplitude = 0.0;
        double med_mu_rel = 0.0;
        double med_sigma_rel = 0.0;
        double med_tstar_rel = 0.0;
        double med_ber_excess = 0.0;
    };
    std::vector<Row> rows;
    double slope_mu = 0.0;
    double slope_sigma = 0.0;
    double slope_tstar = 0.0;
    double slope_ber = 0.0;
};

PropagationResult run_error_propagation(const PropagationConfig& config);

// ---- hard-decoder failure-rate grid ----------------------------------------------

struct Table1Config {
    long long N = 2048;
    std::vector<long long> alphas = {23, 25, 27};
    std::vector<double> p_es = {0.008, 0.01, 0.012};
    std::string out_dir;
};

struct Table1Cell {
    long long alpha = 0;
    double p_e = 0.0;
    double gaussian = 0.0;
    double poisson = 0.0;
    double exact = 0.0;
};

std::vector<Table1Cell> run_table1(const Table1Config& config);

// ---- policy build / capacity report -----------------------------------------------

struct PolicyBuildConfig {
    PriorGrid prior = standard_prior(5);
    DpConfig dp = standard_dp_config();
    std::string out_file;
    bool include_values = true;
};

PolicyTables run_policy_build(const PolicyBuildConfig& config);

struct CapacityReport {
    std::vector<double> thresholds;
    LLRTable llr;
    double mutual_information = 0.0;
    double mismatched_bound = 0.0;
    double kl_divergence = 0.0;
};

CapacityReport make_capacity_report(const VoltageModel& truth, const ParameterEstimate& estimate,
                                    std::vector<double> thresholds);

// ---- small shared helpers ----------------------------------------------------------

// Median with +infinity entries allowed.
double median(std::vector<double> v);

// Least-squares slope of log(y) against log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

// Deterministic manifest describing a run; written next to result files.
void write_manifest(const std::string& out_dir, const std::string& command,
                    std::uint64_t seed, const std::string& config_digest,
                    const std::vector<std::string>& outputs);

std::string hex_digest(std::uint64_t h);

}  // namespace flashread
