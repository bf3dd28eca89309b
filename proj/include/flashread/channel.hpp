#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flashread/errors.hpp"
#include "flashread/numerics.hpp"
#include "flashread/rng.hpp"

namespace flashread {

enum class NoiseFamily { gaussian, laplace };

// One voltage level: mean and scale (Gaussian sigma or Laplace b).
struct LevelParams {
    double mu = 0.0;
    double scale = 1.0;
};

// Ground-truth model of the cell voltages in a page: an ordered mixture of
// per-level distributions with level priors (uniform unless overridden).
class VoltageModel {
public:
    VoltageModel(std::vector<LevelParams> levels, NoiseFamily family = NoiseFamily::gaussian,
                 std::vector<double> priors = {});

    static VoltageModel slc(double mu1, double sigma1, double mu2, double sigma2,
                            NoiseFamily family = NoiseFamily::gaussian);

    std::size_t num_levels() const { return levels_.size(); }
    const LevelParams& level(std::size_t i) const { return levels_[i]; }
    NoiseFamily family() const { return family_; }
    double prior(std::size_t i) const { return priors_[i]; }

    // cdf of the level-i voltage distribution at t.
    double level_cdf(std::size_t i, double t) const;
    // pdf of the level-i voltage distribution at t.
    double level_pdf(std::size_t i, double t) const;
    // Sample a voltage for a cell programmed to level i.
    double sample_level(std::size_t i, Rng& rng) const;

    bool is_slc() const { return levels_.size() == 2; }

private:
    std::vector<LevelParams> levels_;
    NoiseFamily family_;
    std::vector<double> priors_;
};

// Additive read noise on a cdf sample, with optional quantization of y.
struct ReadNoiseModel {
    enum class Kind { none, uniform };
    Kind kind = Kind::none;
    double lo = 0.0;
    double hi = 0.0;
    std::optional<QuantizationGrid> y_quantization;

    static ReadNoiseModel noiseless() { return {}; }
    static ReadNoiseModel uniform(double lo, double hi);

    ReadNoiseModel quantized(QuantizationGrid grid) const {
        ReadNoiseModel m = *this;
        m.y_quantization = grid;
        return m;
    }

    double sample(Rng& rng) const {
        return kind == Kind::uniform ? rng.uniform(lo, hi) : 0.0;
    }
    // Apply quantization + clamping to a noisy cdf sample.
    double finalize(double y) const;
};

// One threshold read: threshold and observed ones-fraction.
struct ReadRecord {
    double t = 0.0;
    double y = 0.0;
};

// 2 x (M+1) transition probabilities of the DMC induced by M thresholds.
// Column j is the interval (t_{j-1}, t_j]; column 0 is the read-as-1 side.
struct TransitionMatrix {
    std::vector<double> thresholds;
    std::array<std::vector<double>, 2> p;

    std::size_t num_intervals() const { return p[0].size(); }
};

// Mixture cdf at t: the noiseless ones-fraction of a read at threshold t.
double cdf_sample(const VoltageModel& model, double t);

// Simulated threshold read: y = clamp(quantize(cdf + noise)).
ReadRecord read(const VoltageModel& model, double t, const ReadNoiseModel& noise, Rng& rng);

// Bit-error rate of a hard read at threshold t (SLC only).
double ber(const VoltageModel& model, double t);

// BER-minimizing threshold: pdf-intersection root between the two means.
double optimal_threshold(const VoltageModel& model);

// Allocation- and exception-free Gaussian pdf-intersection solver; empty when
// no root lies strictly between the means.
std::optional<double> gaussian_intersection(double mu1, double s1, double mu2, double s2,
                                            double prior1 = 0.5, double prior2 = 0.5);

double t_mean(const VoltageModel& model);
double t_median(const VoltageModel& model);

TransitionMatrix transition_matrix(const VoltageModel& model, std::span<const double> thresholds);

// ---- Monte Carlo mode: explicit cell arrays -------------------------------

struct CellArray {
    std::vector<std::uint8_t> bits;   // written bit per cell (1 = low level)
    std::vector<double> voltage;      // sampled stored voltage per cell
};

// Program an SLC page: bit 1 -> level 1 (low), bit 0 -> level 2 (high).
CellArray program_cells(const VoltageModel& model, std::span<const std::uint8_t> bits, Rng& rng);

// Empirical read of a cell array: ones-fraction through the noise pipeline.
ReadRecord read_cells(const CellArray& cells, double t, const ReadNoiseModel& noise, Rng& rng);

// Interval index (0..M) of each cell under the given sorted thresholds.
std::vector<int> classify_cells(const CellArray& cells, std::span<const double> thresholds);

// ---- MLC / TLC page abstraction -------------------------------------------

enum class PageKind { lower, middle, upper };

// Boundary indices (0-based, boundary k sits between levels k and k+1) read by
// a page, per the usual Gray layout: TLC lower=D, middle=B,F, upper=A,C,E,G.
std::vector<int> page_boundary_slots(std::size_t num_levels, PageKind page);

// Per-threshold multiples of the scalar shift parameter. The middle-page
// default follows the (delta, -3/2 delta) convention; other pages shift all
// thresholds by delta.
std::vector<double> default_delta_weights(std::size_t num_levels, PageKind page);

// Page bit value of each level under the Gray mapping implied by the slots.
std::vector<std::uint8_t> page_bits(std::size_t num_levels, PageKind page);

// Default base thresholds: pdf intersections of adjacent levels.
std::vector<double> base_page_thresholds(const VoltageModel& model, PageKind page);

// Ones-fraction read of one page of an MLC/TLC model with all of the page's
// thresholds shifted by their delta multiples.
ReadRecord page_read(const VoltageModel& model, PageKind page, double delta,
                     const ReadNoiseModel& noise, Rng& rng,
                     std::span<const double> delta_weights = {});

// Page-read schedules that gather enough data to estimate every level:
// 5 page reads for MLC, 6 for TLC.
struct PageReadSpec {
    PageKind page;
    double delta;
};
std::vector<PageReadSpec> mlc_estimation_schedule(double delta_step = 0.02);
std::vector<PageReadSpec> tlc_estimation_schedule(double delta_step = 0.02);

// ---- Model files -----------------------------------------------------------

// Plain-text key-value model files (see README for the schema).
VoltageModel load_model(const std::string& path);
void save_model(const VoltageModel& model, const std::string& path);

}  // namespace flashread
