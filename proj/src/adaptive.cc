#include "mmzi/adaptive.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mmzi/parallel.h"
#include "mmzi/simplex.h"

namespace mmzi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> reduce_all(std::vector<double> v) {
    for (auto &x : v) {
        x = reduce_phase(x);
    }
    return v;
}

std::vector<double> add(const std::vector<double> &a, const std::vector<double> &b) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); i++) {
        out[i] = a[i] + b[i];
    }
    return out;
}

/// psi such that truth + psi lands on `target` if estimate == truth.
std::vector<double> steering(const std::array<double, 2> &target, const std::vector<double> &estimate) {
    return reduce_all({target[0] - estimate[0], target[1] - estimate[1]});
}

}  // namespace

GaussianPrior GaussianPrior::flat(size_t n) {
    return GaussianPrior{std::vector<double>(n, 0.0), std::vector<double>(n, kInf)};
}

bool GaussianPrior::is_flat() const {
    return std::all_of(sigma.begin(), sigma.end(), [](double s) { return std::isinf(s); });
}

double GaussianPrior::log_density(const std::vector<double> &phis) const {
    double total = 0;
    for (size_t i = 0; i < mean.size(); i++) {
        if (std::isinf(sigma[i])) {
            continue;
        }
        const double z = wrapped_difference(phis[i], mean[i]) / sigma[i];
        total -= 0.5 * z * z;
    }
    return total;
}

void GaussianPrior::validate() const {
    if (mean.size() != sigma.size()) {
        throw std::invalid_argument("GaussianPrior: mean and sigma differ in length");
    }
    for (double s : sigma) {
        if (!(s > 0)) {
            throw std::invalid_argument("GaussianPrior: sigma must be positive");
        }
    }
}

uint64_t CountRecord::total() const {
    return std::accumulate(counts.begin(), counts.end(), uint64_t{0});
}

std::vector<uint64_t> sample_counts(const std::vector<double> &probs, uint64_t nu, std::mt19937_64 &rng) {
    if (nu == 0) {
        throw std::invalid_argument("sample_counts: need at least one measurement");
    }
    if (probs.empty()) {
        throw std::invalid_argument("sample_counts: empty distribution");
    }
    std::vector<uint64_t> counts(probs.size(), 0);
    double mass = 0;
    for (double p : probs) {
        mass += std::max(p, 0.0);
    }
    uint64_t remaining = nu;
    for (size_t k = 0; k + 1 < probs.size() && remaining > 0; k++) {
        const double p = std::max(probs[k], 0.0);
        const double q = mass > 0 ? std::clamp(p / mass, 0.0, 1.0) : 0.0;
        mass -= p;
        if (q <= 0) {
            continue;
        }
        std::binomial_distribution<uint64_t> draw(remaining, q);
        counts[k] = q >= 1 ? remaining : draw(rng);
        remaining -= counts[k];
    }
    counts.back() += remaining;
    return counts;
}

CountRecord sample_outcomes(const OutcomeDistribution &dist, uint64_t nu, uint64_t seed) {
    std::mt19937_64 rng(seed);
    CountRecord rec;
    rec.counts = sample_counts(dist.probs, nu, rng);
    return rec;
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

uint64_t repetition_seed(uint64_t master, uint64_t repetition) {
    return splitmix64(master ^ (0x9E3779B97F4A7C15ULL * (repetition + 1)));
}

PhaseModel::PhaseModel(MmziSetup setup, Probe probe)
    : setup_(std::move(setup)), model_(setup_.splitter, setup_.splitter, std::move(probe)) {
    lattice_.push_back(std::vector<double>(num_params(), 0.0));
    if (num_params() != 2) {
        return;
    }
    const std::vector<std::vector<double>> points{{0.37, 1.91}, {2.83, 4.41}, {5.1, 0.77}};
    const std::vector<std::vector<double>> controls{{0, 0}, {0.6, 1.3}};
    std::vector<std::vector<double>> reference;
    for (const auto &phi : points) {
        for (const auto &psi : controls) {
            reference.emplace_back();
            probabilities(phi, psi, reference.back());
        }
    }
    std::set<std::pair<long, long>> seen{{0, 0}};
    std::vector<double> probs;
    for (int m = 2; m <= 12; m++) {
        for (int a = 0; a < m; a++) {
            for (int b = 0; b < m; b++) {
                // Key on the reduced fraction scaled to a common denominator.
                const long key_a = static_cast<long>(a) * 27720 / m;
                const long key_b = static_cast<long>(b) * 27720 / m;
                if (!seen.insert({key_a, key_b}).second) {
                    continue;
                }
                const std::vector<double> t{kTwoPi * a / m, kTwoPi * b / m};
                bool invariant = true;
                size_t r = 0;
                for (const auto &phi : points) {
                    for (const auto &psi : controls) {
                        probabilities(add(phi, t), psi, probs);
                        for (size_t k = 0; k < probs.size() && invariant; k++) {
                            invariant = std::abs(probs[k] - reference[r][k]) < 1e-9;
                        }
                        r++;
                    }
                }
                if (invariant) {
                    lattice_.push_back(t);
                }
            }
        }
    }
}

void PhaseModel::probabilities(
    const std::vector<double> &phis, const std::vector<double> &psi, std::vector<double> &out) const {
    model_.probabilities(setup_.config(phis, psi), out);
}

OutcomeDistribution PhaseModel::distribution(const std::vector<double> &phis, const std::vector<double> &psi) const {
    return model_.distribution(setup_.config(phis, psi));
}

FisherMatrix PhaseModel::fisher(const std::vector<double> &phis, const std::vector<double> &psi) const {
    return fisher_matrix(distribution(phis, psi));
}

std::vector<double> PhaseModel::nearest_equivalent(
    const std::vector<double> &phis, const std::vector<double> &reference) const {
    std::vector<double> best;
    double best_dist = kInf;
    for (const auto &t : lattice_) {
        auto cand = reduce_all(add(phis, t));
        double d = 0;
        for (size_t i = 0; i < cand.size(); i++) {
            const double w = wrapped_difference(cand[i], reference[i]);
            d += w * w;
        }
        if (d < best_dist) {
            best_dist = d;
            best = std::move(cand);
        }
    }
    return best;
}

double PhaseModel::lattice_distance(const std::vector<double> &a, const std::vector<double> &b) const {
    double best = kInf;
    for (const auto &t : lattice_) {
        double d = 0;
        for (size_t i = 0; i < a.size(); i++) {
            d = std::max(d, std::abs(wrapped_difference(a[i] + t[i], b[i])));
        }
        best = std::min(best, d);
    }
    return best;
}

double log_likelihood(
    const PhaseModel &model,
    const std::vector<CountRecord> &data,
    const GaussianPrior &prior,
    const std::vector<double> &phis) {
    double total = prior.log_density(phis);
    std::vector<double> probs;
    for (const auto &rec : data) {
        model.probabilities(phis, rec.psi, probs);
        for (size_t k = 0; k < rec.counts.size(); k++) {
            if (rec.counts[k] == 0) {
                continue;
            }
            if (!(probs[k] > 0)) {
                return -kInf;
            }
            total += static_cast<double>(rec.counts[k]) * std::log(probs[k]);
        }
    }
    return total;
}

std::optional<std::vector<double>> fisher_sigma(
    const PhaseModel &model, const std::vector<CountRecord> &data, const std::vector<double> &phis) {
    const size_t n = model.num_params();
    FisherMatrix total{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
    try {
        for (const auto &rec : data) {
            total.entries += static_cast<double>(rec.total()) * model.fisher(phis, rec.psi).entries;
        }
    } catch (const SingularSupportError &) {
        return std::nullopt;
    }
    const FisherInverse inv = invert_fisher(total);
    if (inv.singular) {
        return std::nullopt;
    }
    std::vector<double> sigma(n);
    for (size_t i = 0; i < n; i++) {
        sigma[i] = std::sqrt(inv.diag(i));
    }
    return sigma;
}

namespace {

std::vector<double> curvature_sigma(
    const PhaseModel &model,
    const std::vector<CountRecord> &data,
    const GaussianPrior &prior,
    const std::vector<double> &x) {
    const size_t n = x.size();
    const double h = 1e-4;
    auto f = [&](const std::vector<double> &p) { return log_likelihood(model, data, prior, p); };
    Eigen::MatrixXd hess(n, n);
    const double f0 = f(x);
    for (size_t i = 0; i < n; i++) {
        for (size_t j = i; j < n; j++) {
            double v;
            if (i == j) {
                auto xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                v = (f(xp) - 2 * f0 + f(xm)) / (h * h);
            } else {
                auto pp = x, pm = x, mp = x, mm = x;
                pp[i] += h, pp[j] += h;
                pm[i] += h, pm[j] -= h;
                mp[i] -= h, mp[j] += h;
                mm[i] -= h, mm[j] -= h;
                v = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
            }
            hess(i, j) = hess(j, i) = -v;
        }
    }
    std::vector<double> sigma(n, std::numeric_limits<double>::quiet_NaN());
    if (!hess.allFinite()) {
        return sigma;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success) {
        return sigma;
    }
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
    for (size_t i = 0; i < n; i++) {
        sigma[i] = std::sqrt(cov(i, i));
    }
    return sigma;
}

std::vector<double> refine_maximum(
    const std::function<double(const std::vector<double> &)> &log_l, const std::vector<double> &start, double step,
    double tolerance, double *value) {
    SimplexOptions so;
    so.initial_step = step;
    so.x_tolerance = tolerance;
    const auto res = nelder_mead_minimize([&](const std::vector<double> &x) { return -log_l(x); }, start, so);
    *value = -res.value;
    return reduce_all(res.x);
}

}  // namespace

MlEstimate ml_estimate(
    const PhaseModel &model,
    const std::vector<CountRecord> &data,
    const GaussianPrior &prior,
    const MlSearch &search) {
    const size_t n = model.num_params();
    prior.validate();
    if (prior.size() != n) {
        throw std::invalid_argument("ml_estimate: prior size differs from the number of phases");
    }
    if (search.center.has_value() != search.half_width.has_value()) {
        throw std::invalid_argument("ml_estimate: window centre and half-width go together");
    }
    if (!(search.grid_step > 0) || !(search.refine_tolerance > 0)) {
        throw std::invalid_argument("ml_estimate: grid step and refine tolerance must be positive");
    }

    std::vector<double> lo(n), step(n);
    std::vector<size_t> points(n);
    for (size_t i = 0; i < n; i++) {
        double center, half, sigma;
        if (search.center) {
            center = (*search.center)[i];
            half = (*search.half_width)[i];
            sigma = half / 4;
        } else {
            center = prior.mean[i];
            sigma = prior.sigma[i];
            half = 4 * sigma;
        }
        if (!(half > 0)) {
            throw std::invalid_argument("ml_estimate: search half-width must be positive");
        }
        if (half >= kPi) {
            step[i] = search.grid_step;
            points[i] = static_cast<size_t>(std::ceil(kTwoPi / step[i]));
            step[i] = kTwoPi / static_cast<double>(points[i]);
            lo[i] = 0;
        } else {
            step[i] = std::min(search.grid_step, sigma / 2);
            points[i] = static_cast<size_t>(std::ceil(2 * half / step[i])) + 1;
            step[i] = 2 * half / static_cast<double>(points[i] - 1);
            lo[i] = center - half;
        }
    }

    auto log_l = [&](const std::vector<double> &x) { return log_likelihood(model, data, prior, x); };
    size_t cells = 1;
    for (size_t p : points) {
        cells *= p;
    }
    double best_value = -kInf;
    std::vector<double> best_point;
    std::vector<double> x(n);
    for (size_t c = 0; c < cells; c++) {
        size_t rem = c;
        for (size_t i = n; i-- > 0;) {
            x[i] = lo[i] + step[i] * static_cast<double>(rem % points[i]);
            rem /= points[i];
        }
        const double v = log_l(x);
        if (v > best_value) {
            best_value = v;
            best_point = x;
        }
    }
    if (best_point.empty()) {
        throw std::runtime_error("ml_estimate: likelihood vanishes everywhere in the search window");
    }

    MlEstimate out;
    out.estimate = refine_maximum(log_l, best_point, *std::min_element(step.begin(), step.end()),
                                  search.refine_tolerance, &out.log_likelihood);
    if (auto sigma = fisher_sigma(model, data, out.estimate)) {
        out.sigma = *sigma;
    } else {
        out.sigma = curvature_sigma(model, data, prior, out.estimate);
        out.curvature_fallback = true;
    }
    return out;
}

TorusLikelihoodTable::TorusLikelihoodTable(
    const PhaseModel &model, std::vector<std::vector<double>> settings, size_t resolution)
    : resolution_(resolution), num_outcomes_(model.num_outcomes()), settings_(std::move(settings)) {
    if (model.num_params() != 2) {
        throw std::invalid_argument("TorusLikelihoodTable: two-parameter models only");
    }
    if (resolution_ < 8 || settings_.empty()) {
        throw std::invalid_argument("TorusLikelihoodTable: need resolution >= 8 and at least one setting");
    }
    for (const auto &s : settings_) {
        if (s.size() != 2) {
            throw std::invalid_argument("TorusLikelihoodTable: control settings must have two entries");
        }
    }
    const size_t stride = settings_.size() * num_outcomes_;
    log_probs_.resize(resolution_ * resolution_ * stride);
    parallel_for(resolution_, [&](size_t i) {
        std::vector<double> probs;
        for (size_t j = 0; j < resolution_; j++) {
            const std::vector<double> phi{spacing() * static_cast<double>(i), spacing() * static_cast<double>(j)};
            double *dst = &log_probs_[(i * resolution_ + j) * stride];
            for (size_t s = 0; s < settings_.size(); s++) {
                model.probabilities(phi, settings_[s], probs);
                for (size_t k = 0; k < num_outcomes_; k++) {
                    dst[s * num_outcomes_ + k] = probs[k] > 0 ? std::log(probs[k]) : -kInf;
                }
            }
        }
    });
}

std::vector<double> TorusLikelihoodTable::evaluate(const std::vector<std::vector<uint64_t>> &counts) const {
    if (counts.size() != settings_.size()) {
        throw std::invalid_argument("TorusLikelihoodTable: one count vector per setting required");
    }
    std::vector<std::pair<size_t, double>> terms;
    for (size_t s = 0; s < counts.size(); s++) {
        if (counts[s].size() != num_outcomes_) {
            throw std::invalid_argument("TorusLikelihoodTable: count vector has the wrong length");
        }
        for (size_t k = 0; k < num_outcomes_; k++) {
            if (counts[s][k] > 0) {
                terms.emplace_back(s * num_outcomes_ + k, static_cast<double>(counts[s][k]));
            }
        }
    }
    const size_t stride = settings_.size() * num_outcomes_;
    std::vector<double> out(resolution_ * resolution_);
    for (size_t c = 0; c < out.size(); c++) {
        const double *row = &log_probs_[c * stride];
        double total = 0;
        for (const auto &[idx, n] : terms) {
            total += n * row[idx];
        }
        out[c] = std::isnan(total) ? -kInf : total;
    }
    return out;
}

RoughEstimate rough_estimate(
    const PhaseModel &model,
    const TorusLikelihoodTable &table,
    const std::vector<CountRecord> &data,
    double refine_tolerance,
    double separation) {
    if (data.size() != table.settings().size()) {
        throw std::invalid_argument("rough_estimate: data must hold one record per table setting");
    }
    std::vector<std::vector<uint64_t>> counts;
    for (size_t s = 0; s < data.size(); s++) {
        if (data[s].psi != table.settings()[s]) {
            throw std::invalid_argument("rough_estimate: record settings differ from the table");
        }
        counts.push_back(data[s].counts);
    }
    const auto grid = table.evaluate(counts);
    const size_t g = table.resolution();

    std::vector<std::pair<double, size_t>> peaks;
    for (size_t i = 0; i < g; i++) {
        for (size_t j = 0; j < g; j++) {
            const double v = grid[i * g + j];
            if (!std::isfinite(v)) {
                continue;
            }
            bool peak = true;
            for (size_t di = 0; di < 3 && peak; di++) {
                for (size_t dj = 0; dj < 3 && peak; dj++) {
                    if (di == 1 && dj == 1) {
                        continue;
                    }
                    peak = grid[((i + g + di - 1) % g) * g + (j + g + dj - 1) % g] <= v;
                }
            }
            if (peak) {
                peaks.emplace_back(v, i * g + j);
            }
        }
    }
    if (peaks.empty()) {
        throw std::runtime_error("rough_estimate: likelihood vanishes on the whole torus");
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const auto &a, const auto &b) { return a.first > b.first; });

    const GaussianPrior flat = GaussianPrior::flat(2);
    auto log_l = [&](const std::vector<double> &x) { return log_likelihood(model, data, flat, x); };
    auto coords = [&](size_t idx) {
        return std::vector<double>{table.spacing() * static_cast<double>(idx / g),
                                   table.spacing() * static_cast<double>(idx % g)};
    };

    RoughEstimate out;
    out.estimate = refine_maximum(log_l, coords(peaks[0].second), table.spacing(), refine_tolerance,
                                  &out.log_likelihood);
    std::vector<std::pair<double, std::vector<double>>> found{{out.log_likelihood, out.estimate}};
    size_t refined = 0;
    for (size_t p = 1; p < peaks.size() && refined < 3; p++) {
        const auto start = coords(peaks[p].second);
        if (model.lattice_distance(start, out.estimate) < separation) {
            continue;
        }
        double value;
        auto x = refine_maximum(log_l, start, table.spacing(), refine_tolerance, &value);
        refined++;
        bool duplicate = false;
        for (const auto &f : found) {
            duplicate = duplicate || model.lattice_distance(x, f.second) < separation;
        }
        if (!duplicate) {
            found.emplace_back(value, std::move(x));
        }
    }
    std::stable_sort(found.begin(), found.end(), [](const auto &a, const auto &b) { return a.first > b.first; });
    out.log_likelihood = found[0].first;
    out.estimate = found[0].second;
    out.margin = found.size() > 1 ? found[0].first - found[1].first : kInf;
    for (size_t k = 1; k < found.size(); k++) {
        out.competitors.push_back(found[k].second);
    }
    return out;
}

uint64_t StepRecord::budget() const {
    uint64_t total = 0;
    for (const auto &r : records) {
        total += r.total();
    }
    return total;
}

uint64_t ProtocolTrace::total_budget() const {
    uint64_t total = 0;
    for (const auto &s : steps) {
        total += s.budget();
    }
    return total;
}

void AdaptiveConfig::validate() const {
    if (modes != 3 && modes != 4) {
        throw std::invalid_argument("adaptive protocol: modes must be 3 or 4");
    }
    if (modes == 4 && !(phi0 > 0)) {
        throw std::invalid_argument(
            "adaptive protocol: the 4-mode protocol needs phi0 > 0; at phi0 = 0 the working point lies on a "
            "singular line of the Fisher matrix and the estimate is unstable");
    }
    if (true_phases.size() != 2 || !std::isfinite(true_phases[0]) || !std::isfinite(true_phases[1])) {
        throw std::invalid_argument("adaptive protocol: true_phases must hold two finite values");
    }
    const size_t expected = modes == 3 ? 3 : 2;
    if (fractions.size() != expected) {
        throw std::invalid_argument("adaptive protocol: fractions must have " + std::to_string(expected) +
                                    " entries for " + std::to_string(modes) + " modes");
    }
    double sum = 0;
    for (double f : fractions) {
        if (!(f >= 0)) {
            throw std::invalid_argument("adaptive protocol: fractions must be non-negative");
        }
        sum += f;
    }
    if (std::abs(sum - 1) > 1e-9) {
        throw std::invalid_argument("adaptive protocol: fractions must sum to 1");
    }
    if (!(fractions[0] > 0)) {
        throw std::invalid_argument("adaptive protocol: the rough step needs a positive fraction");
    }
    for (size_t k = 1; k < fractions.size(); k++) {
        if (!(fractions[k] > 0)) {
            throw std::invalid_argument("adaptive protocol: every working-point step needs a positive fraction");
        }
    }
    if (rough_settings.empty()) {
        throw std::invalid_argument("adaptive protocol: need at least one rough control setting");
    }
    for (const auto &s : rough_settings) {
        if (s.size() != 2) {
            throw std::invalid_argument("adaptive protocol: rough control settings have two entries");
        }
    }
    const double rough = std::round(fractions[0] * static_cast<double>(nu));
    if (rough < static_cast<double>(rough_settings.size()) ||
        static_cast<double>(nu) - rough < static_cast<double>(expected - 1)) {
        throw std::invalid_argument("adaptive protocol: nu too small for the requested budget split");
    }
    if (!(ambiguity_margin >= 0)) {
        throw std::invalid_argument("adaptive protocol: ambiguity margin must be non-negative");
    }
    if (!std::isfinite(o1_offset[0]) || !std::isfinite(o1_offset[1])) {
        throw std::invalid_argument("adaptive protocol: o1_offset must be finite");
    }
    if (rough_table_resolution < 16) {
        throw std::invalid_argument("adaptive protocol: rough table resolution must be at least 16");
    }
    if (!(refine_tolerance > 0)) {
        throw std::invalid_argument("adaptive protocol: refine tolerance must be positive");
    }
}

MmziSetup AdaptiveConfig::setup() const {
    return modes == 3 ? MmziSetup::three_mode() : MmziSetup::four_mode(phi0);
}

double AdaptiveConfig::default_bound() const {
    return modes == 3 ? 0.543 : 0.437;
}

namespace {

AdaptiveConfig validated(AdaptiveConfig config) {
    config.validate();
    return config;
}

}  // namespace

AdaptiveProtocol::AdaptiveProtocol(AdaptiveConfig config)
    : config_(validated(std::move(config))),
      model_(config_.setup(), Probe::single_photons(config_.modes)),
      table_(model_, config_.rough_settings, config_.rough_table_resolution) {
}

ProtocolTrace AdaptiveProtocol::run(uint64_t seed) const {
    return run(config_.true_phases, seed);
}

ProtocolTrace AdaptiveProtocol::run(const std::vector<double> &true_phases, uint64_t seed) const {
    if (true_phases.size() != 2) {
        throw std::invalid_argument("adaptive protocol: true_phases must hold two values");
    }
    std::mt19937_64 rng(seed);
    const auto truth = reduce_all(true_phases);
    std::vector<double> probs;
    auto measure = [&](const std::vector<double> &psi, uint64_t count) {
        model_.probabilities(truth, psi, probs);
        return CountRecord{psi, sample_counts(probs, count, rng)};
    };
    // Spreads `count` over the rough settings, accumulating into `records`.
    auto measure_rough = [&](std::vector<CountRecord> &records, uint64_t count) {
        const size_t s_count = table_.settings().size();
        for (size_t s = 0; s < s_count; s++) {
            const uint64_t share = count / s_count + (s < count % s_count ? 1 : 0);
            if (share == 0) {
                continue;
            }
            const auto rec = measure(table_.settings()[s], share);
            for (size_t k = 0; k < rec.counts.size(); k++) {
                records[s].counts[k] += rec.counts[k];
            }
        }
    };

    const uint64_t nu = config_.nu;
    const uint64_t rough_budget = static_cast<uint64_t>(std::llround(config_.fractions[0] * static_cast<double>(nu)));
    const size_t main_steps = config_.fractions.size() - 1;

    ProtocolTrace trace;
    StepRecord rough_step;
    rough_step.label = "rough";
    for (const auto &s : table_.settings()) {
        rough_step.records.push_back(CountRecord{s, std::vector<uint64_t>(model_.num_outcomes(), 0)});
    }
    measure_rough(rough_step.records, rough_budget);
    uint64_t used = rough_budget;
    RoughEstimate rough = rough_estimate(model_, table_, rough_step.records, config_.refine_tolerance);
    const uint64_t redraw = std::max<uint64_t>(table_.settings().size(), rough_budget / 2);
    while (rough.margin < config_.ambiguity_margin && trace.rough_redraws < config_.max_rough_redraws &&
           nu - used >= redraw + main_steps) {
        measure_rough(rough_step.records, redraw);
        used += redraw;
        trace.rough_redraws++;
        rough = rough_estimate(model_, table_, rough_step.records, config_.refine_tolerance);
    }
    rough_step.estimate = rough.estimate;
    if (auto sigma = fisher_sigma(model_, rough_step.records, rough.estimate)) {
        rough_step.sigma = *sigma;
    } else {
        rough_step.sigma = curvature_sigma(model_, rough_step.records, GaussianPrior::flat(2), rough.estimate);
    }
    trace.steps.push_back(rough_step);

    // Remaining budget split in proportion to the working-point fractions.
    const uint64_t remaining = nu - used;
    double main_fraction = 0;
    for (size_t k = 1; k < config_.fractions.size(); k++) {
        main_fraction += config_.fractions[k];
    }
    std::vector<uint64_t> budgets(main_steps);
    uint64_t assigned = 0;
    for (size_t k = 0; k < main_steps; k++) {
        budgets[k] = k + 1 == main_steps
                         ? remaining - assigned
                         : static_cast<uint64_t>(
                               std::llround(static_cast<double>(remaining) * config_.fractions[k + 1] / main_fraction));
        assigned += budgets[k];
    }

    const std::vector<std::array<double, 2>> targets =
        config_.modes == 3 ? std::vector<std::array<double, 2>>{kThreeModeQ1, kThreeModeQ2}
                           : std::vector<std::array<double, 2>>{
                                 {kFourModeO1[0] + config_.o1_offset[0], kFourModeO1[1] + config_.o1_offset[1]}};
    std::vector<double> current = rough.estimate;
    std::vector<double> current_sigma = rough_step.sigma;
    for (size_t k = 0; k < main_steps; k++) {
        StepRecord step;
        step.label = config_.modes == 3 ? (k == 0 ? "q1" : "q2") : "o1";
        const auto psi = steering(targets[k], current);
        step.records.push_back(measure(psi, budgets[k]));
        // A prior wider than a quarter turn is no better than the torus search.
        GaussianPrior prior{current, current_sigma};
        for (auto &s : prior.sigma) {
            if (!std::isfinite(s) || s > kPi / 4) {
                s = kPi / 4;
            }
        }
        const auto est = ml_estimate(model_, step.records, prior, MlSearch{0.02, config_.refine_tolerance, {}, {}});
        step.estimate = est.estimate;
        step.sigma = est.sigma;
        current = est.estimate;
        for (size_t i = 0; i < 2; i++) {
            if (std::isfinite(est.sigma[i])) {
                current_sigma[i] = est.sigma[i];
            }
        }
        trace.steps.push_back(step);
    }

    // Joint maximum likelihood over every record near the last step.
    std::vector<CountRecord> all;
    for (const auto &s : trace.steps) {
        all.insert(all.end(), s.records.begin(), s.records.end());
    }
    auto local_ml = [&](const std::vector<double> &center, const std::vector<double> &sigma) {
        MlSearch search{0.02, config_.refine_tolerance, center, std::vector<double>{4 * sigma[0], 4 * sigma[1]}};
        for (auto &h : *search.half_width) {
            h = std::clamp(h, 1e-3, kPi / 4);
        }
        return ml_estimate(model_, all, GaussianPrior::flat(2), search);
    };
    auto final_est = local_ml(current, current_sigma);
    // An unresolved rough step may have picked the wrong branch. The records
    // of the later steps still carry information about the others, so every
    // rough candidate is searched with all records and the likeliest wins.
    if (rough.margin < config_.ambiguity_margin) {
        trace.branch_check = true;
        std::vector<double> wide = rough_step.sigma;
        for (auto &s : wide) {
            if (!std::isfinite(s)) {
                s = 0.05;
            }
        }
        for (const auto &alt : rough.competitors) {
            const auto est = local_ml(alt, wide);
            if (est.log_likelihood > final_est.log_likelihood) {
                final_est = est;
            }
        }
    }
    trace.estimate = final_est.estimate;
    trace.sigma = final_est.sigma;
    return trace;
}

ProtocolTrace run_adaptive_three_mode(
    const std::vector<double> &true_phases, uint64_t nu, const std::vector<double> &fractions, uint64_t seed) {
    AdaptiveConfig config;
    config.modes = 3;
    config.true_phases = true_phases;
    config.nu = nu;
    config.fractions = fractions;
    return AdaptiveProtocol(config).run(seed);
}

ProtocolTrace run_adaptive_four_mode(
    const std::vector<double> &true_phases, double phi0, uint64_t nu, const std::vector<double> &fractions,
    uint64_t seed) {
    AdaptiveConfig config;
    config.modes = 4;
    config.phi0 = phi0;
    config.true_phases = true_phases;
    config.nu = nu;
    config.fractions = fractions;
    return AdaptiveProtocol(config).run(seed);
}

std::vector<ParameterStats> estimate_stats(
    const PhaseModel &model,
    const std::vector<double> &truth,
    const std::vector<std::vector<double>> &estimates,
    const std::vector<std::vector<double>> &sigmas,
    uint64_t nu,
    double bound) {
    const size_t p = estimates.size();
    if (p < 2) {
        throw std::invalid_argument("estimate_stats: need at least two estimates");
    }
    const size_t n = truth.size();
    std::vector<std::vector<double>> dev(n, std::vector<double>(p));
    for (size_t r = 0; r < p; r++) {
        const auto eq = model.nearest_equivalent(estimates[r], truth);
        for (size_t i = 0; i < n; i++) {
            dev[i][r] = wrapped_difference(eq[i], truth[i]);
        }
    }
    const double root_nu = std::sqrt(static_cast<double>(nu));
    std::vector<ParameterStats> stats(n);
    for (size_t i = 0; i < n; i++) {
        double s = 0, c = 0;
        for (double d : dev[i]) {
            s += std::sin(d);
            c += std::cos(d);
        }
        const double mean = std::atan2(s, c);
        double ss = 0;
        for (double d : dev[i]) {
            const double w = wrapped_difference(d, mean);
            ss += w * w;
        }
        stats[i].bias = mean;
        stats[i].std_dev = std::sqrt(ss / static_cast<double>(p - 1));
        stats[i].scaled = stats[i].std_dev * root_nu;
        stats[i].ratio = bound > 0 ? stats[i].scaled / bound : std::numeric_limits<double>::quiet_NaN();
        double pred = 0;
        for (const auto &sg : sigmas) {
            pred += sg.size() > i ? sg[i] : std::numeric_limits<double>::quiet_NaN();
        }
        stats[i].predicted_scaled = sigmas.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                   : pred / static_cast<double>(sigmas.size()) * root_nu;
    }
    return stats;
}

MonteCarloResult monte_carlo(
    const AdaptiveProtocol &protocol, size_t repetitions, uint64_t master_seed, double bound) {
    if (repetitions < 2) {
        throw std::invalid_argument("monte_carlo: need at least two repetitions for statistics");
    }
    MonteCarloResult result;
    result.master_seed = master_seed;
    result.repetitions = repetitions;
    result.bound = bound > 0 ? bound : protocol.config().default_bound();
    result.estimates.resize(repetitions);
    result.sigmas.resize(repetitions);
    result.rough_redraws.resize(repetitions);
    parallel_for(repetitions, [&](size_t r) {
        const auto trace = protocol.run(repetition_seed(master_seed, r));
        result.estimates[r] = trace.estimate;
        result.sigmas[r] = trace.sigma;
        result.rough_redraws[r] = trace.rough_redraws;
    });
    result.stats = estimate_stats(protocol.model(), reduce_all(protocol.config().true_phases), result.estimates,
                                  result.sigmas, protocol.config().nu, result.bound);
    return result;
}

}  // namespace mmzi
