#include "flashread/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flashread {

VoltageModel::VoltageModel(std::vector<LevelParams> levels, NoiseFamily family,
                           std::vector<double> priors)
    : levels_(std::move(levels)), family_(family), priors_(std::move(priors)) {
    if (levels_.empty()) {
        throw PreconditionError("VoltageModel: needs at least one level");
    }
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        if (!(levels_[i].scale > 0.0)) {
            throw PreconditionError("VoltageModel: level scale must be positive");
        }
        if (i > 0 && !(levels_[i].mu > levels_[i - 1].mu)) {
            throw PreconditionError("VoltageModel: level means must be strictly increasing");
        }
    }
    if (priors_.empty()) {
        priors_.assign(levels_.size(), 1.0 / static_cast<double>(levels_.size()));
    }
    if (priors_.size() != levels_.size()) {
        throw PreconditionError("VoltageModel: one prior per level required");
    }
    double sum = 0.0;
    for (double p : priors_) {
        if (p < 0.0) throw PreconditionError("VoltageModel: negative level prior");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw PreconditionError("VoltageModel: level priors must sum to 1");
    }
}

VoltageModel VoltageModel::slc(double mu1, double sigma1, double mu2, double sigma2,
                               NoiseFamily family) {
    return VoltageModel({{mu1, sigma1}, {mu2, sigma2}}, family);
}

double VoltageModel::level_cdf(std::size_t i, double t) const {
    const LevelParams& lv = levels_[i];
    if (family_ == NoiseFamily::gaussian) {
        return q_func((lv.mu - t) / lv.scale);
    }
    double z = (t - lv.mu) / lv.scale;
    return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

double VoltageModel::level_pdf(std::size_t i, double t) const {
    const LevelParams& lv = levels_[i];
    if (family_ == NoiseFamily::gaussian) {
        return phi((t - lv.mu) / lv.scale) / lv.scale;
    }
    return 0.5 / lv.scale * std::exp(-std::abs(t - lv.mu) / lv.scale);
}

double VoltageModel::sample_level(std::size_t i, Rng& rng) const {
    const LevelParams& lv = levels_[i];
    return family_ == NoiseFamily::gaussian ? rng.normal(lv.mu, lv.scale)
                                            : rng.laplace(lv.mu, lv.scale);
}

ReadNoiseModel ReadNoiseModel::uniform(double lo, double hi) {
    if (!(lo < hi)) {
        throw PreconditionError("ReadNoiseModel: uniform bounds need lo < hi");
    }
    if (std::abs(lo + hi) > 1e-12) {
        throw PreconditionError("ReadNoiseModel: read noise must be zero-mean");
    }
    ReadNoiseModel m;
    m.kind = Kind::uniform;
    m.lo = lo;
    m.hi = hi;
    return m;
}

double ReadNoiseModel::finalize(double y) const {
    if (y_quantization) y = y_quantization->quantize(y);
    return std::clamp(y, 0.0, 1.0);
}

double cdf_sample(const VoltageModel& model, double t) {
    double y = 0.0;
    for (std::size_t i = 0; i < model.num_levels(); ++i) {
        y += model.prior(i) * model.level_cdf(i, t);
    }
    return y;
}

ReadRecord read(const VoltageModel& model, double t, const ReadNoiseModel& noise, Rng& rng) {
    double y = cdf_sample(model, t) + noise.sample(rng);
    return {t, noise.finalize(y)};
}

namespace {
void require_slc(const VoltageModel& model, const char* op) {
    if (!model.is_slc()) {
        throw UnsupportedModelError(std::string(op) + ": requires a 2-level model");
    }
}
}  // namespace

double ber(const VoltageModel& model, double t) {
    require_slc(model, "ber");
    // Level 1 reads wrong above t, level 2 below t.
    return model.prior(0) * (1.0 - model.level_cdf(0, t)) + model.prior(1) * model.level_cdf(1, t);
}

double t_mean(const VoltageModel& model) {
    require_slc(model, "t_mean");
    return 0.5 * (model.level(0).mu + model.level(1).mu);
}

double t_median(const VoltageModel& model) {
    require_slc(model, "t_median");
    const auto& a = model.level(0);
    const auto& b = model.level(1);
    return (a.mu * b.scale + b.mu * a.scale) / (a.scale + b.scale);
}

std::optional<double> gaussian_intersection(double mu1, double s1, double mu2, double s2,
                                            double prior1, double prior2) {
    // ((t-mu1)/s1)^2 - ((t-mu2)/s2)^2 = 2 log(s2 p1 / (s1 p2)), the crossing
    // point of the prior-weighted Gaussian pdfs.
    const double rhs = 2.0 * std::log((s2 * prior1) / (s1 * prior2));
    const double a = 1.0 / (s1 * s1) - 1.0 / (s2 * s2);
    const double b = -2.0 * mu1 / (s1 * s1) + 2.0 * mu2 / (s2 * s2);
    const double c = mu1 * mu1 / (s1 * s1) - mu2 * mu2 / (s2 * s2) - rhs;

    if (std::abs(a) < 1e-14 * (std::abs(b) + 1.0)) {
        // Equal variances: the quadratic degenerates to a linear equation.
        if (b == 0.0) return std::nullopt;
        double t = -c / b;
        if (t > mu1 && t < mu2) return t;
        return std::nullopt;
    }
    double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    double root = std::sqrt(disc);
    double r1 = (-b + root) / (2.0 * a);
    double r2 = (-b - root) / (2.0 * a);
    // The second intersection lies in a tail; keep the one between the means.
    const bool r1_in = r1 > mu1 && r1 < mu2;
    const bool r2_in = r2 > mu1 && r2 < mu2;
    if (r1_in && r2_in) return std::min(r1, r2);
    if (r1_in) return r1;
    if (r2_in) return r2;
    return std::nullopt;
}

double optimal_threshold(const VoltageModel& model) {
    require_slc(model, "optimal_threshold");
    const double mu1 = model.level(0).mu, s1 = model.level(0).scale;
    const double mu2 = model.level(1).mu, s2 = model.level(1).scale;

    if (model.family() == NoiseFamily::laplace) {
        // Weighted pdf intersection: p1/(2 b1) e^{-|t-mu1|/b1} = p2/(2 b2) e^{-|t-mu2|/b2},
        // with mu1 < t < mu2 so the absolute values open with fixed signs.
        double rhs = std::log((model.prior(0) * s2) / (model.prior(1) * s1));
        double t = (rhs + mu1 / s1 + mu2 / s2) / (1.0 / s1 + 1.0 / s2);
        if (!(t > mu1 && t < mu2)) {
            throw DegenerateReadsError("optimal_threshold: no pdf intersection between the means");
        }
        return t;
    }

    auto t = gaussian_intersection(mu1, s1, mu2, s2, model.prior(0), model.prior(1));
    if (!t) {
        throw DegenerateReadsError("optimal_threshold: no pdf intersection between the means");
    }
    return *t;
}

TransitionMatrix transition_matrix(const VoltageModel& model, std::span<const double> thresholds) {
    require_slc(model, "transition_matrix");
    for (std::size_t j = 1; j < thresholds.size(); ++j) {
        if (!(thresholds[j] > thresholds[j - 1])) {
            throw PreconditionError("transition_matrix: thresholds must be strictly increasing");
        }
    }
    TransitionMatrix tm;
    tm.thresholds.assign(thresholds.begin(), thresholds.end());
    for (int row = 0; row < 2; ++row) {
        auto& p = tm.p[row];
        p.resize(thresholds.size() + 1);
        double prev = 0.0;
        for (std::size_t j = 0; j < thresholds.size(); ++j) {
            double cur = model.level_cdf(row, thresholds[j]);
            p[j] = std::max(0.0, cur - prev);
            prev = cur;
        }
        p[thresholds.size()] = std::max(0.0, 1.0 - prev);
    }
    return tm;
}

CellArray program_cells(const VoltageModel& model, std::span<const std::uint8_t> bits, Rng& rng) {
    require_slc(model, "program_cells");
    CellArray cells;
    cells.bits.assign(bits.begin(), bits.end());
    cells.voltage.resize(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        cells.voltage[i] = model.sample_level(bits[i] ? 0 : 1, rng);
    }
    return cells;
}

ReadRecord read_cells(const CellArray& cells, double t, const ReadNoiseModel& noise, Rng& rng) {
    if (cells.voltage.empty()) {
        throw PreconditionError("read_cells: empty cell array");
    }
    std::size_t ones = 0;
    for (double v : cells.voltage) {
        if (v < t) ++ones;
    }
    double y = static_cast<double>(ones) / static_cast<double>(cells.voltage.size());
    y += noise.sample(rng);
    return {t, noise.finalize(y)};
}

std::vector<int> classify_cells(const CellArray& cells, std::span<const double> thresholds) {
    for (std::size_t j = 1; j < thresholds.size(); ++j) {
        if (!(thresholds[j] > thresholds[j - 1])) {
            throw PreconditionError("classify_cells: thresholds must be strictly increasing");
        }
    }
    std::vector<int> idx(cells.voltage.size());
    for (std::size_t i = 0; i < cells.voltage.size(); ++i) {
        int k = 0;
        while (k < static_cast<int>(thresholds.size()) && cells.voltage[i] >= thresholds[k]) ++k;
        idx[i] = k;
    }
    return idx;
}

// ---- pages ------------------------------------------------------------------

namespace {
void require_page(std::size_t num_levels, PageKind page) {
    if (num_levels == 4) {
        if (page == PageKind::middle) {
            throw PreconditionError("page: MLC has no middle page");
        }
        return;
    }
    if (num_levels == 8) return;
    throw PreconditionError("page: model must have 4 (MLC) or 8 (TLC) levels");
}
}  // namespace

std::vector<int> page_boundary_slots(std::size_t num_levels, PageKind page) {
    require_page(num_levels, page);
    if (num_levels == 4) {
        return page == PageKind::lower ? std::vector<int>{1} : std::vector<int>{0, 2};
    }
    switch (page) {
        case PageKind::lower: return {3};           // D
        case PageKind::middle: return {1, 5};       // B, F
        case PageKind::upper: return {0, 2, 4, 6};  // A, C, E, G
    }
    throw PreconditionError("page: bad kind");
}

std::vector<double> default_delta_weights(std::size_t num_levels, PageKind page) {
    auto slots = page_boundary_slots(num_levels, page);
    if (num_levels == 8 && page == PageKind::middle) {
        return {1.0, -1.5};
    }
    return std::vector<double>(slots.size(), 1.0);
}

std::vector<std::uint8_t> page_bits(std::size_t num_levels, PageKind page) {
    auto slots = page_boundary_slots(num_levels, page);
    std::vector<std::uint8_t> bits(num_levels);
    // Levels below the first threshold read as 1; each crossed threshold flips.
    std::uint8_t bit = 1;
    std::size_t next = 0;
    for (std::size_t lvl = 0; lvl < num_levels; ++lvl) {
        if (next < slots.size() && static_cast<int>(lvl) == slots[next] + 1) {
            bit ^= 1;
            ++next;
        }
        bits[lvl] = bit;
    }
    return bits;
}

std::vector<double> base_page_thresholds(const VoltageModel& model, PageKind page) {
    auto slots = page_boundary_slots(model.num_levels(), page);
    std::vector<double> out;
    out.reserve(slots.size());
    for (int s : slots) {
        VoltageModel pair({model.level(s), model.level(s + 1)}, model.family());
        out.push_back(optimal_threshold(pair));
    }
    return out;
}

ReadRecord page_read(const VoltageModel& model, PageKind page, double delta,
                     const ReadNoiseModel& noise, Rng& rng, std::span<const double> delta_weights) {
    auto slots = page_boundary_slots(model.num_levels(), page);
    std::vector<double> weights(delta_weights.begin(), delta_weights.end());
    if (weights.empty()) weights = default_delta_weights(model.num_levels(), page);
    if (weights.size() != slots.size()) {
        throw PreconditionError("page_read: one delta weight per page threshold required");
    }
    std::vector<double> thresholds = base_page_thresholds(model, page);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        thresholds[i] += weights[i] * delta;
    }
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > thresholds[i - 1])) {
            throw PreconditionError("page_read: shifted thresholds crossed");
        }
    }

    // P(page bit reads 1 | level): alternating interval masses starting at 1
    // below the first threshold.
    double y = 0.0;
    for (std::size_t lvl = 0; lvl < model.num_levels(); ++lvl) {
        double mass_one = 0.0;
        double prev_cdf = 0.0;
        bool ones_interval = true;
        for (double t : thresholds) {
            double c = model.level_cdf(lvl, t);
            if (ones_interval) mass_one += c - prev_cdf;
            prev_cdf = c;
            ones_interval = !ones_interval;
        }
        if (ones_interval) mass_one += 1.0 - prev_cdf;
        y += model.prior(lvl) * mass_one;
    }
    y += noise.sample(rng);
    // Report the read as the lead threshold plus shift; y is the page fraction.
    return {thresholds[0], noise.finalize(y)};
}

std::vector<PageReadSpec> mlc_estimation_schedule(double delta_step) {
    // Two lower-page reads plus three upper-page reads isolate all 4 levels.
    return {{PageKind::lower, -delta_step},
            {PageKind::lower, delta_step},
            {PageKind::upper, -delta_step},
            {PageKind::upper, 0.0},
            {PageKind::upper, delta_step}};
}

std::vector<PageReadSpec> tlc_estimation_schedule(double delta_step) {
    // One lower, two middle, three upper page reads cover all 8 levels.
    return {{PageKind::lower, 0.0},         {PageKind::middle, -delta_step},
            {PageKind::middle, delta_step}, {PageKind::upper, -delta_step},
            {PageKind::upper, 0.0},         {PageKind::upper, delta_step}};
}

// ---- model files ------------------------------------------------------------

VoltageModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileFormatError("model file: cannot open " + path);
    NoiseFamily family = NoiseFamily::gaussian;
    std::vector<LevelParams> levels;
    std::vector<double> priors;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string key;
        if (!(ss >> key) || key[0] == '#') continue;
        if (key == "family") {
            std::string fam;
            ss >> fam;
            if (fam == "gaussian") family = NoiseFamily::gaussian;
            else if (fam == "laplace") family = NoiseFamily::laplace;
            else throw FileFormatError("model file: unknown family '" + fam + "'");
        } else if (key == "level") {
            double mu, scale;
            if (!(ss >> mu >> scale)) {
                throw FileFormatError("model file: level needs 'level <mu> <scale>'");
            }
            levels.push_back({mu, scale});
        } else if (key == "priors") {
            double p;
            while (ss >> p) priors.push_back(p);
        } else {
            throw FileFormatError("model file: unknown key '" + key + "'");
        }
    }
    if (levels.empty()) throw FileFormatError("model file: no levels in " + path);
    return VoltageModel(std::move(levels), family, std::move(priors));
}

void save_model(const VoltageModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FileFormatError("model file: cannot write " + path);
    out << "family " << (model.family() == NoiseFamily::gaussian ? "gaussian" : "laplace") << "\n";
    char buf[128];
    for (std::size_t i = 0; i < model.num_levels(); ++i) {
        std::snprintf(buf, sizeof(buf), "level %.17g %.17g\n", model.level(i).mu,
                      model.level(i).scale);
        out << buf;
    }
    out << "priors";
    for (std::size_t i = 0; i < model.num_levels(); ++i) {
        std::snprintf(buf, sizeof(buf), " %.17g", model.prior(i));
        out << buf;
    }
    out << "\n";
}

}  // namespace flashread
