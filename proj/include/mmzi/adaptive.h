#ifndef MMZI_ADAPTIVE_H
#define MMZI_ADAPTIVE_H

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mmzi/fisher.h"
#include "mmzi/fock.h"
#include "mmzi/optics.h"

namespace mmzi {

/// Independent Gaussian prior per phase, angular differences wrapped into
/// [-pi, pi). An infinite sigma makes that coordinate flat.
struct GaussianPrior {
    std::vector<double> mean;
    std::vector<double> sigma;

    static GaussianPrior flat(size_t n);
    size_t size() const {
        return mean.size();
    }
    bool is_flat() const;
    /// Unnormalized log density (0 for a flat prior).
    double log_density(const std::vector<double> &phis) const;
    /// Throws std::invalid_argument on size mismatch or sigma <= 0.
    void validate() const;
};

/// Counts collected at one control setting psi.
struct CountRecord {
    std::vector<double> psi;
    std::vector<uint64_t> counts;

    uint64_t total() const;
};

/// Multinomial draw of `nu` outcomes by sequential binomials. Tiny negative
/// probabilities from round-off are clamped to zero. Throws
/// std::invalid_argument for nu == 0 or an empty distribution.
std::vector<uint64_t> sample_counts(const std::vector<double> &probs, uint64_t nu, std::mt19937_64 &rng);
CountRecord sample_outcomes(const OutcomeDistribution &dist, uint64_t nu, uint64_t seed);

/// SplitMix64 finalizer.
uint64_t splitmix64(uint64_t x);
/// Seed of repetition r: splitmix64(master ^ (0x9E3779B97F4A7C15 * (r + 1))).
uint64_t repetition_seed(uint64_t master, uint64_t repetition);

/// Outcome probabilities of an MMZI as a function of the unknown phases and
/// the control offsets on the same modes.
class PhaseModel {
   public:
    PhaseModel(MmziSetup setup, Probe probe);

    const MmziSetup &setup() const {
        return setup_;
    }
    const OutcomeModel &outcomes() const {
        return model_;
    }
    size_t num_params() const {
        return setup_.num_unknown();
    }
    size_t num_outcomes() const {
        return model_.num_outcomes();
    }

    void probabilities(const std::vector<double> &phis, const std::vector<double> &psi, std::vector<double> &out) const;
    OutcomeDistribution distribution(const std::vector<double> &phis, const std::vector<double> &psi) const;
    /// Throws SingularSupportError like fisher_matrix.
    FisherMatrix fisher(const std::vector<double> &phis, const std::vector<double> &psi) const;

    /// Phase translations t with p(k | phi + t) = p(k | phi) for every
    /// control setting, found among rational multiples 2 pi a / m (m <= 12).
    /// Always contains the zero vector first. Two-parameter models only.
    const std::vector<std::vector<double>> &translation_lattice() const {
        return lattice_;
    }
    /// Lattice image of `phis` closest to `reference` on the torus.
    std::vector<double> nearest_equivalent(const std::vector<double> &phis, const std::vector<double> &reference) const;
    /// Max-norm torus distance between the lattice classes of a and b.
    double lattice_distance(const std::vector<double> &a, const std::vector<double> &b) const;

   private:
    MmziSetup setup_;
    OutcomeModel model_;
    std::vector<std::vector<double>> lattice_;
};

/// sum over records and outcomes of n_k log p(k | phi, psi) plus the prior.
/// Outcomes with n_k = 0 contribute nothing; p = 0 with n_k > 0 gives -inf.
double log_likelihood(
    const PhaseModel &model,
    const std::vector<CountRecord> &data,
    const GaussianPrior &prior,
    const std::vector<double> &phis);

struct MlSearch {
    /// Grid step cap; the actual step is min(grid_step, sigma / 2).
    double grid_step = 0.02;
    double refine_tolerance = 1e-5;
    /// Search window centre and half-width per coordinate. When unset the
    /// window is the prior mean +- 4 sigma, or the full torus if that covers
    /// more than a full turn.
    std::optional<std::vector<double>> center;
    std::optional<std::vector<double>> half_width;
};

struct MlEstimate {
    std::vector<double> estimate;
    std::vector<double> sigma;
    double log_likelihood = 0;
    /// True when F summed over the records was singular at the estimate and
    /// sigma came from the finite-difference likelihood curvature.
    bool curvature_fallback = false;
};

/// Grid search over the window followed by simplex refinement. sigma_i is
/// sqrt([(sum_s nu_s F_s)^-1]_ii) at the estimate, with the likelihood Hessian
/// as fallback (NaN if that is not positive definite either).
MlEstimate ml_estimate(
    const PhaseModel &model,
    const std::vector<CountRecord> &data,
    const GaussianPrior &prior,
    const MlSearch &search = {});

/// sqrt(diag((sum_s nu_s F_s)^-1)) at phis, nullopt if singular.
std::optional<std::vector<double>> fisher_sigma(
    const PhaseModel &model, const std::vector<CountRecord> &data, const std::vector<double> &phis);

/// log p(k | phi, psi) tabulated on a uniform torus grid for a fixed list of
/// control settings, so flat-prior searches can be repeated cheaply.
class TorusLikelihoodTable {
   public:
    TorusLikelihoodTable(const PhaseModel &model, std::vector<std::vector<double>> settings, size_t resolution);

    size_t resolution() const {
        return resolution_;
    }
    const std::vector<std::vector<double>> &settings() const {
        return settings_;
    }
    double spacing() const {
        return kTwoPi / static_cast<double>(resolution_);
    }
    /// Log-likelihood of counts[s] (one vector per setting) at every grid
    /// cell, phi2 fastest.
    std::vector<double> evaluate(const std::vector<std::vector<uint64_t>> &counts) const;

   private:
    size_t resolution_;
    size_t num_outcomes_;
    std::vector<std::vector<double>> settings_;
    // [cell][setting][outcome]
    std::vector<double> log_probs_;
};

/// Rough estimate from flat-prior data at the table's settings: the best grid
/// peak refined by simplex, plus the best competing peak that is not
/// lattice-equivalent and lies more than `separation` away.
struct RoughEstimate {
    std::vector<double> estimate;
    double log_likelihood = 0;
    /// log L(best) - log L(best competitor); +inf if there is none.
    double margin = 0;
    /// Refined competing peaks, best first.
    std::vector<std::vector<double>> competitors;
};
RoughEstimate rough_estimate(
    const PhaseModel &model,
    const TorusLikelihoodTable &table,
    const std::vector<CountRecord> &data,
    double refine_tolerance = 1e-5,
    double separation = 0.25);

struct StepRecord {
    std::string label;
    std::vector<CountRecord> records;
    std::vector<double> estimate;
    std::vector<double> sigma;
    uint64_t budget() const;
};

struct ProtocolTrace {
    std::vector<StepRecord> steps;
    std::vector<double> estimate;
    std::vector<double> sigma;
    /// Extra rough batches drawn because the first rough estimate was
    /// ambiguous.
    size_t rough_redraws = 0;
    /// True when the rough step stayed ambiguous and the final estimate was
    /// chosen among the rough candidates by the likelihood of all records.
    bool branch_check = false;
    uint64_t total_budget() const;
};

inline constexpr size_t kDefaultRoughTableResolution = 256;

/// Refined minima of Tr[F^-1] for the 3-mode |1,1,1> landscape, the mirror
/// pair targeted by steps two and three.
inline constexpr std::array<double, 2> kThreeModeQ1{0.892029799, 2.190838369};
inline constexpr std::array<double, 2> kThreeModeQ2{2.190838369, 0.892029799};
inline constexpr std::array<double, 2> kFourModeO1{kPi, kPi};

struct AdaptiveConfig {
    size_t modes = 3;
    /// 4-mode reference phase; must be > 0.
    double phi0 = 0.01;
    std::vector<double> true_phases{1.0, 2.0};
    uint64_t nu = 10000;
    /// 3-mode: {rough, q1, q2}; 4-mode: {rough, main}. Must sum to 1.
    std::vector<double> fractions{0.05, 0.475, 0.475};
    /// Control settings the rough budget is spread over.
    std::vector<std::vector<double>> rough_settings{{0, 0}, {1, 0}, {0, 1}};
    /// Rough estimates whose margin is below this many log-units get another
    /// rough batch of half the rough budget, at most `max_rough_redraws` times.
    double ambiguity_margin = 4.0;
    /// 4-mode only: the main step is steered to O1 + o1_offset. Around O1 the
    /// counts are exactly symmetric under the fold (a, b) -> (phi0 - b, phi0 - a)
    /// of the offsets from O1, and nearly symmetric under the swap
    /// (a, b) -> (b, a). Both mirror images sit as far from the rough estimate
    /// as the truth does, so rough data cannot pick between them when the step
    /// lands on O1 itself. Offsetting along (1, 1) costs little precision and
    /// separates the fold image; a smaller anti-diagonal part separates the
    /// swap image.
    std::array<double, 2> o1_offset{-0.05, -0.17};
    size_t max_rough_redraws = 2;
    size_t rough_table_resolution = kDefaultRoughTableResolution;
    double refine_tolerance = 1e-5;

    /// Throws std::invalid_argument on an invalid combination.
    void validate() const;
    MmziSetup setup() const;
    /// Expected delta-phi sqrt(nu) at the working points: 0.543 (3-mode) and
    /// 0.437 (4-mode).
    double default_bound() const;
};

/// Shared per-configuration state: models and the rough lookup table.
class AdaptiveProtocol {
   public:
    explicit AdaptiveProtocol(AdaptiveConfig config);

    const AdaptiveConfig &config() const {
        return config_;
    }
    const PhaseModel &model() const {
        return model_;
    }
    /// One protocol run with its own RNG stream; deterministic in `seed`.
    ProtocolTrace run(uint64_t seed) const;
    /// Same run for different true phases (shares the rough table).
    ProtocolTrace run(const std::vector<double> &true_phases, uint64_t seed) const;

   private:
    AdaptiveConfig config_;
    PhaseModel model_;
    TorusLikelihoodTable table_;
};

ProtocolTrace run_adaptive_three_mode(
    const std::vector<double> &true_phases, uint64_t nu, const std::vector<double> &fractions, uint64_t seed);
ProtocolTrace run_adaptive_four_mode(
    const std::vector<double> &true_phases, double phi0, uint64_t nu, const std::vector<double> &fractions,
    uint64_t seed);

struct ParameterStats {
    /// Circular mean of the lattice-reduced deviation from the true phase.
    double bias = 0;
    /// Sample std of the deviations around their circular mean.
    double std_dev = 0;
    /// std_dev * sqrt(nu).
    double scaled = 0;
    /// scaled / bound.
    double ratio = 0;
    /// Mean of the per-run Fisher sigmas times sqrt(nu).
    double predicted_scaled = 0;
};

struct MonteCarloResult {
    uint64_t master_seed = 0;
    size_t repetitions = 0;
    double bound = 0;
    std::vector<std::vector<double>> estimates;
    std::vector<std::vector<double>> sigmas;
    std::vector<size_t> rough_redraws;
    std::vector<ParameterStats> stats;
};

/// p independent runs with seeds repetition_seed(master, r). Throws
/// std::invalid_argument for p < 2. `bound` <= 0 selects the default.
MonteCarloResult monte_carlo(const AdaptiveProtocol &protocol, size_t repetitions, uint64_t master_seed,
                             double bound = 0);

/// Statistics of given estimates about `truth`, reduced modulo the model's
/// translation lattice.
std::vector<ParameterStats> estimate_stats(
    const PhaseModel &model,
    const std::vector<double> &truth,
    const std::vector<std::vector<double>> &estimates,
    const std::vector<std::vector<double>> &sigmas,
    uint64_t nu,
    double bound);

}  // namespace mmzi

#endif
