#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flashread/channel.hpp"
#include "flashread/errors.hpp"
#include "flashread/estimation.hpp"
#include "flashread/numerics.hpp"

namespace flashread {

// A read observation ruled out by every parameter vector in the prior.
struct InconsistentObservationError : Error {
    using Error::Error;
};

// Noise parameters the dynamic program optimizes over.
struct ParameterVector {
    double mu1 = 0.0;
    double mu2 = 0.0;
    double sigma1 = 1.0;
    double sigma2 = 1.0;
};

struct ParamRange {
    double lo = 0.0;
    double hi = 0.0;
    int n = 1;  // cell-centered grid points
};

// Discrete prior over (mu1, mu2, sigma1, sigma2).
class PriorGrid {
public:
    // Independent uniform prior, cell-centered points per parameter.
    static PriorGrid uniform_product(ParamRange mu1, ParamRange mu2, ParamRange sigma1,
                                     ParamRange sigma2);
    // Arbitrary weighted point set.
    static PriorGrid from_points(std::vector<ParameterVector> points, std::vector<double> mass);

    std::size_t size() const { return points_.size(); }
    const ParameterVector& point(std::size_t i) const { return points_[i]; }
    double mass(std::size_t i) const { return mass_[i]; }
    const std::vector<double>& masses() const { return mass_; }
    // Set for product-constructed grids; empty optional otherwise.
    const std::optional<std::array<ParamRange, 4>>& ranges() const { return ranges_; }

    void set_mass(std::size_t i, double m) { mass_[i] = m; }
    void normalize();

private:
    std::vector<ParameterVector> points_;
    std::vector<double> mass_;
    std::optional<std::array<ParamRange, 4>> ranges_;
};

// Posterior over the prior grid after one read, by pointwise likelihood.
PriorGrid bayes_update(const PriorGrid& prior, const ReadRecord& r, const ReadNoiseModel& noise);

struct RewardSpec {
    enum class Kind { hard, soft };
    Kind kind = Kind::soft;
    // Reward assigned when the history does not yield a usable estimate.
    double floor() const { return kind == Kind::hard ? 0.5 : 0.0; }
};

// Discretization and pruning knobs of the backward recursion.
struct DpConfig {
    QuantizationGrid t_grid{0.03, 0.04};
    double t_lo = 0.55;
    double t_hi = 2.35;
    QuantizationGrid y_grid{0.0, 0.04};
    ReadNoiseModel noise = ReadNoiseModel::uniform(-0.02, 0.02);
    RewardSpec reward;
    int horizon = 4;
    KnownParams known;           // must leave exactly `horizon` reads needed
    double obs_floor = 2e-5;     // conditional observation-mass pruning
    double state_mass_floor = 1e-9;  // joint-mass admission for states
    int threads = 0;             // 0 -> hardware concurrency
};

// One stage of the policy: canonical histories of fixed length mapping to the
// next threshold (action) and the state value.
struct StageTable {
    std::vector<std::uint64_t> keys;      // canonical history keys, sorted
    std::vector<std::uint16_t> actions;   // index into thresholds
    std::vector<double> values;           // empty when values were dropped

    std::optional<std::size_t> find(std::uint64_t key) const;
};

struct PolicyTables {
    DpConfig config;
    PriorGrid prior;
    std::vector<double> thresholds;  // action set (ascending)
    int t1_star_index = -1;
    double t1_star = 0.0;
    double root_value = 0.0;
    // stages[k] holds histories of length k+1 and selects read k+2.
    std::vector<StageTable> stages;
    // Diagnostics: per expansion stage, largest conditional mass dropped.
    std::array<double, 4> max_dropped_obs_mass{};
    std::array<double, 4> dropped_state_mass{};
};

// Canonical history key helpers (exposed for tests and tooling).
std::uint64_t pack_history(std::vector<std::pair<int, int>> reads);  // (t_idx, y_idx)

// Full backward recursion over the discretized read process.
PolicyTables backward_recursion(const PriorGrid& prior, const DpConfig& config);

// Expected terminal reward of a complete history under a posterior.
double expected_reward(const PriorGrid& posterior, const std::vector<ReadRecord>& history,
                       const RewardSpec& reward, const KnownParams& known = {});

// Distribution of the quantized observation for a given clean cdf value.
struct ObsBin {
    int index = 0;
    double mass = 0.0;
};
std::vector<ObsBin> observation_distribution(double cdf_value, const ReadNoiseModel& noise,
                                             const QuantizationGrid& y_grid, int num_bins);

void save_policy(const PolicyTables& tables, const std::string& path, bool include_values = true);
PolicyTables load_policy(const std::string& path);

struct PolicyExecution {
    std::vector<ReadRecord> reads;  // issue order
    std::optional<ParameterEstimate> estimate;
    std::string estimate_error;  // set when estimate is empty
    int fallback_lookups = 0;    // nearest-state substitutions used
};

// Run the offline policy against a live reader; observations are quantized to
// the policy grid for table lookups, estimates use the raw reads.
PolicyExecution execute_policy(const PolicyTables& tables, const Reader& reader);

}  // namespace flashread
