#include "mmzi/adaptive.h"

#include <cmath>
#include <numeric>

#include "gtest/gtest.h"
#include "mmzi/landscape.h"

using namespace mmzi;

namespace {

const PhaseModel &three_mode() {
    static const PhaseModel model(MmziSetup::three_mode(), Probe::single_photons(3));
    return model;
}

// Counts proportional to the exact probabilities, so the likelihood peaks at
// the generating phases up to rounding.
CountRecord expected_counts(const PhaseModel &model, const std::vector<double> &phis, const std::vector<double> &psi,
                            double nu) {
    std::vector<double> p;
    model.probabilities(phis, psi, p);
    CountRecord rec{psi, {}};
    for (double x : p) {
        rec.counts.push_back(static_cast<uint64_t>(std::llround(x * nu)));
    }
    return rec;
}

double sample_std(const std::vector<double> &v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST(adaptive, splitmix_reference_value) {
    ASSERT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
    ASSERT_EQ(repetition_seed(7, 0), splitmix64(7 ^ 0x9E3779B97F4A7C15ULL));
    ASSERT_NE(repetition_seed(7, 1), repetition_seed(7, 2));
}

TEST(adaptive, sample_counts_statistics) {
    const std::vector<double> p{0.2, 0.0, 0.3, 0.5};
    std::mt19937_64 rng(99);
    const int reps = 4000;
    const uint64_t nu = 500;
    std::vector<double> sum(4, 0), sum2(4, 0);
    for (int r = 0; r < reps; r++) {
        const auto c = sample_counts(p, nu, rng);
        ASSERT_EQ(std::accumulate(c.begin(), c.end(), uint64_t{0}), nu);
        ASSERT_EQ(c[1], 0u);
        for (size_t k = 0; k < 4; k++) {
            sum[k] += static_cast<double>(c[k]);
            sum2[k] += static_cast<double>(c[k] * c[k]);
        }
    }
    for (size_t k = 0; k < 4; k++) {
        const double mean = sum[k] / reps;
        const double var = sum2[k] / reps - mean * mean;
        const double expected_var = nu * p[k] * (1 - p[k]);
        ASSERT_NEAR(mean, nu * p[k], 5 * std::sqrt(expected_var / reps) + 1e-12);
        ASSERT_NEAR(var, expected_var, 0.1 * expected_var + 1e-12);
    }
    ASSERT_THROW(sample_counts(p, 0, rng), std::invalid_argument);
    ASSERT_THROW(sample_counts({}, 10, rng), std::invalid_argument);
}

TEST(adaptive, sampling_is_seeded) {
    const auto dist = three_mode().distribution({1.0, 2.0}, {0, 0});
    const auto a = sample_outcomes(dist, 1000, 5);
    const auto b = sample_outcomes(dist, 1000, 5);
    const auto c = sample_outcomes(dist, 1000, 6);
    ASSERT_EQ(a.counts, b.counts);
    ASSERT_NE(a.counts, c.counts);
    ASSERT_EQ(a.total(), 1000u);
}

TEST(adaptive, gaussian_prior) {
    GaussianPrior prior{{1.0, 2.0}, {0.1, 0.2}};
    ASSERT_NO_THROW(prior.validate());
    ASSERT_NEAR(prior.log_density({1.0, 2.0}), 0, 1e-15);
    ASSERT_NEAR(prior.log_density({1.1, 2.0}), -0.5, 1e-12);
    ASSERT_NEAR(prior.log_density({1.0 + kTwoPi, 2.0 - kTwoPi}), 0, 1e-12);
    ASSERT_FALSE(prior.is_flat());
    ASSERT_TRUE(GaussianPrior::flat(2).is_flat());
    ASSERT_EQ(GaussianPrior::flat(2).log_density({0.3, 4.0}), 0);
    ASSERT_THROW((GaussianPrior{{1.0}, {0.0}}).validate(), std::invalid_argument);
    ASSERT_THROW((GaussianPrior{{1.0, 2.0}, {0.1}}).validate(), std::invalid_argument);
}

TEST(adaptive, log_likelihood_matches_direct_sum) {
    const auto &model = three_mode();
    const std::vector<double> phis{0.7, 3.1};
    const std::vector<CountRecord> data{
        CountRecord{{0, 0}, {3, 0, 1, 4, 0, 2, 0, 0, 1, 5}},
        CountRecord{{1, 0}, {0, 2, 0, 0, 7, 1, 0, 3, 0, 0}},
    };
    const GaussianPrior prior{{0.5, 3.0}, {0.2, 0.4}};
    double expected = prior.log_density(phis);
    for (const auto &rec : data) {
        std::vector<double> p;
        model.probabilities(phis, rec.psi, p);
        for (size_t k = 0; k < p.size(); k++) {
            expected += static_cast<double>(rec.counts[k]) * std::log(p[k]);
        }
    }
    ASSERT_NEAR(log_likelihood(model, data, prior, phis), expected, 1e-10);

    // Without splitters |1,1,1> stays put and every other outcome has p = 0.
    const PhaseModel frozen(MmziSetup{UnitaryMatrix::identity(3), {0, 1}, {}}, Probe::single_photons(3));
    const long stay = frozen.outcomes().index_of(FockState{1, 1, 1});
    CountRecord rec{{0, 0}, std::vector<uint64_t>(10, 0)};
    rec.counts[static_cast<size_t>(stay)] = 5;
    ASSERT_EQ(log_likelihood(frozen, {rec}, GaussianPrior::flat(2), {0.3, 0.4}), 0);
    rec.counts[(static_cast<size_t>(stay) + 1) % 10] = 1;
    ASSERT_EQ(log_likelihood(frozen, {rec}, GaussianPrior::flat(2), {0.3, 0.4}), -INFINITY);
}

TEST(adaptive, ml_recovers_generating_phases) {
    const auto &model = three_mode();
    const std::vector<double> truth{1.3, 2.4};
    const std::vector<CountRecord> data{
        expected_counts(model, truth, {0, 0}, 1e7),
        expected_counts(model, truth, {0.5, -0.2}, 1e7),
    };
    MlSearch search;
    search.center = std::vector<double>{1.2, 2.5};
    search.half_width = std::vector<double>{0.3, 0.3};
    const auto est = ml_estimate(model, data, GaussianPrior::flat(2), search);
    ASSERT_NEAR(wrapped_difference(est.estimate[0], truth[0]), 0, 1e-4);
    ASSERT_NEAR(wrapped_difference(est.estimate[1], truth[1]), 0, 1e-4);
    ASSERT_FALSE(est.curvature_fallback);

    const auto sigma = fisher_sigma(model, data, est.estimate);
    ASSERT_TRUE(sigma.has_value());
    ASSERT_NEAR((*sigma)[0], est.sigma[0], 1e-12);
    // Two records of 1e7 shots: sigma ~ 1/sqrt(2e7 F).
    const Eigen::MatrixXd f = model.fisher(truth, {0, 0}).entries + model.fisher(truth, {0.5, -0.2}).entries;
    const Eigen::MatrixXd cov = (1e7 * f).inverse();
    ASSERT_NEAR(est.sigma[0], std::sqrt(cov(0, 0)), 1e-3 * est.sigma[0]);
}

TEST(adaptive, prior_dominates_scarce_data) {
    const auto &model = three_mode();
    const std::vector<CountRecord> data{expected_counts(model, {1.3, 2.4}, {0, 0}, 3)};
    const GaussianPrior prior{{4.0, 0.5}, {1e-3, 1e-3}};
    const auto est = ml_estimate(model, data, prior);
    ASSERT_NEAR(wrapped_difference(est.estimate[0], 4.0), 0, 1e-3);
    ASSERT_NEAR(wrapped_difference(est.estimate[1], 0.5), 0, 1e-3);
}

TEST(adaptive, translation_lattices) {
    const auto &three = three_mode().translation_lattice();
    ASSERT_EQ(three.size(), 3u);
    bool found = false;
    for (const auto &t : three) {
        found = found || (std::abs(t[0] - kTwoPi / 3) < 1e-12 && std::abs(t[1] - 2 * kTwoPi / 3) < 1e-12);
    }
    ASSERT_TRUE(found);

    const PhaseModel four(MmziSetup::four_mode(0.01), Probe::single_photons(4));
    ASSERT_EQ(four.translation_lattice().size(), 2u);
    ASSERT_NEAR(four.translation_lattice()[1][0], kPi, 1e-12);
    ASSERT_NEAR(four.translation_lattice()[1][1], kPi, 1e-12);

    // The lattice really leaves every probability unchanged.
    std::vector<double> p, q;
    three_mode().probabilities({0.4, 1.7}, {0.3, 0.9}, p);
    three_mode().probabilities({0.4 + kTwoPi / 3, 1.7 + 2 * kTwoPi / 3}, {0.3, 0.9}, q);
    for (size_t k = 0; k < p.size(); k++) {
        ASSERT_NEAR(p[k], q[k], 1e-13);
    }

    const std::vector<double> a{0.4, 1.7};
    const std::vector<double> b{0.4 + kTwoPi / 3 + 0.01, 1.7 + 2 * kTwoPi / 3 - 0.02};
    ASSERT_NEAR(three_mode().lattice_distance(a, b), 0.02, 1e-12);
    const auto near = three_mode().nearest_equivalent(b, a);
    ASSERT_NEAR(wrapped_difference(near[0], a[0]), 0.01, 1e-12);
    ASSERT_NEAR(wrapped_difference(near[1], a[1]), -0.02, 1e-12);
}

TEST(adaptive, working_point_constants_match_landscape) {
    const LandscapeModel model(MmziSetup::three_mode(), Probe::single_photons(3));
    const auto points = find_working_points(scan_grid(model, 64), model);
    for (const auto &target : {kThreeModeQ1, kThreeModeQ2}) {
        bool found = false;
        for (const auto &p : points) {
            found = found || (std::abs(wrapped_difference(p.phi1, target[0])) < 1e-4 &&
                              std::abs(wrapped_difference(p.phi2, target[1])) < 1e-4 &&
                              std::abs(p.tr_finv - points.front().tr_finv) < 1e-6);
        }
        ASSERT_TRUE(found);
    }
}

TEST(adaptive, config_validation) {
    AdaptiveConfig c;
    ASSERT_NO_THROW(c.validate());
    ASSERT_NEAR(c.default_bound(), 0.543, 1e-12);

    AdaptiveConfig four;
    four.modes = 4;
    four.fractions = {0.05, 0.95};
    ASSERT_NO_THROW(four.validate());
    ASSERT_NEAR(four.default_bound(), 0.437, 1e-12);
    four.phi0 = 0;
    ASSERT_THROW(four.validate(), std::invalid_argument);
    ASSERT_THROW(AdaptiveProtocol{four}, std::invalid_argument);

    AdaptiveConfig bad = c;
    bad.fractions = {0.1, 0.4, 0.4};
    ASSERT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.fractions = {0.5, 0.5};
    ASSERT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.modes = 5;
    ASSERT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.true_phases = {1.0};
    ASSERT_THROW(bad.validate(), std::invalid_argument);
}

TEST(adaptive, run_is_deterministic_and_spends_budget) {
    const AdaptiveProtocol protocol{AdaptiveConfig{}};
    const auto a = protocol.run(17);
    const auto b = protocol.run(17);
    ASSERT_EQ(a.estimate, b.estimate);
    ASSERT_EQ(a.sigma, b.sigma);
    ASSERT_EQ(a.total_budget(), 10000u);
    ASSERT_GE(a.steps.size(), 3u);
    ASSERT_EQ(a.steps.front().label, "rough");
    for (size_t s = 0; s < a.steps.size(); s++) {
        ASSERT_EQ(a.steps[s].records.size(), b.steps[s].records.size());
        for (size_t r = 0; r < a.steps[s].records.size(); r++) {
            ASSERT_EQ(a.steps[s].records[r].counts, b.steps[s].records[r].counts);
        }
    }
    ASSERT_LT(protocol.model().lattice_distance(a.estimate, {1.0, 2.0}), 0.05);
    ASSERT_NE(protocol.run(18).estimate, a.estimate);
}

TEST(adaptive, four_mode_run) {
    AdaptiveConfig c;
    c.modes = 4;
    c.fractions = {0.05, 0.95};
    c.true_phases = {2.5, 0.8};
    const AdaptiveProtocol protocol{c};
    const auto t = protocol.run(3);
    ASSERT_EQ(t.total_budget(), 10000u);
    ASSERT_EQ(t.steps.back().label, "o1");
    ASSERT_LT(protocol.model().lattice_distance(t.estimate, c.true_phases), 0.05);
}

TEST(adaptive, rough_competitors_are_distinct) {
    const AdaptiveProtocol protocol{AdaptiveConfig{}};
    const auto &model = protocol.model();
    const TorusLikelihoodTable table(model, {{0, 0}, {1, 0}, {0, 1}}, 128);
    std::vector<CountRecord> data;
    for (const auto &psi : table.settings()) {
        data.push_back(expected_counts(model, {3.5, 2.0}, psi, 40));
    }
    const auto rough = rough_estimate(model, table, data);
    ASSERT_FALSE(rough.competitors.empty());
    double previous = rough.log_likelihood;
    for (const auto &c : rough.competitors) {
        ASSERT_GE(model.lattice_distance(c, rough.estimate), 0.25);
        const double v = log_likelihood(model, data, GaussianPrior::flat(2), c);
        ASSERT_LE(v, previous + 1e-9);
        previous = v;
    }
    const double second = log_likelihood(model, data, GaussianPrior::flat(2), rough.competitors[0]);
    ASSERT_NEAR(rough.margin, rough.log_likelihood - second, 1e-6);
}

TEST(adaptive, ambiguous_rough_step_recovers_branch) {
    // This run's rough data stays ambiguous through both redraws and its best
    // rough peak is on the wrong branch.
    AdaptiveConfig c;
    c.true_phases = {3.5, 2.0};
    const AdaptiveProtocol protocol{c};
    const auto t = protocol.run(repetition_seed(9004, 912));
    ASSERT_EQ(t.rough_redraws, 2u);
    ASSERT_TRUE(t.branch_check);
    ASSERT_GT(protocol.model().lattice_distance(t.steps.front().estimate, c.true_phases), 0.5);
    ASSERT_LT(protocol.model().lattice_distance(t.estimate, c.true_phases), 0.03);
}

TEST(adaptive, monte_carlo_is_reproducible) {
    const AdaptiveProtocol protocol{AdaptiveConfig{}};
    const auto a = monte_carlo(protocol, 4, 2024);
    const auto b = monte_carlo(protocol, 4, 2024);
    ASSERT_EQ(a.estimates, b.estimates);
    ASSERT_EQ(a.estimates[2], protocol.run(repetition_seed(2024, 2)).estimate);
    ASSERT_NEAR(a.bound, 0.543, 1e-12);
    ASSERT_THROW(monte_carlo(protocol, 1, 2024), std::invalid_argument);
}

TEST(adaptive, estimate_stats_reduce_modulo_lattice) {
    const auto &model = three_mode();
    const std::vector<double> truth{1.0, 2.0};
    const std::vector<double> d1{0.010, -0.004, 0.002, -0.008, 0.001};
    const std::vector<double> d2{-0.003, 0.006, 0.000, 0.002, -0.005};
    std::vector<std::vector<double>> est;
    std::vector<std::vector<double>> sig;
    for (size_t r = 0; r < d1.size(); r++) {
        // Every other estimate sits on a lattice image of the truth.
        const double shift = r % 2 ? kTwoPi / 3 : 0;
        est.push_back({truth[0] + d1[r] + shift, truth[1] + d2[r] + 2 * shift});
        sig.push_back({0.005, 0.005});
    }
    const auto stats = estimate_stats(model, truth, est, sig, 10000, 0.5);
    ASSERT_NEAR(stats[0].std_dev, sample_std(d1), 1e-6);
    ASSERT_NEAR(stats[1].std_dev, sample_std(d2), 1e-6);
    ASSERT_NEAR(stats[0].bias, 0.0002, 1e-6);
    ASSERT_NEAR(stats[0].scaled, 100 * stats[0].std_dev, 1e-12);
    ASSERT_NEAR(stats[0].ratio, stats[0].scaled / 0.5, 1e-12);
    ASSERT_NEAR(stats[1].predicted_scaled, 0.5, 1e-12);
}

TEST(adaptive, shot_noise_scaling) {
    // Quadrupling nu twice should shrink the spread by four; delta*sqrt(nu) stays put.
    std::vector<double> scaled;
    for (uint64_t nu : {2500, 40000}) {
        AdaptiveConfig c;
        c.nu = nu;
        const auto mc = monte_carlo(AdaptiveProtocol{c}, 200, 555);
        scaled.push_back(0.5 * (mc.stats[0].scaled + mc.stats[1].scaled));
    }
    ASSERT_NEAR(scaled[1] / scaled[0], 1.0, 0.2);
}
