#ifndef MMZI_FISHER_H
#define MMZI_FISHER_H

#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mmzi/fock.h"
#include "mmzi/optics.h"

namespace mmzi {

enum class FisherKind { Classical, Quantum };

/// n x n real symmetric positive-semidefinite information matrix, rad^-2.
struct FisherMatrix {
    Eigen::MatrixXd entries;
    FisherKind kind = FisherKind::Classical;

    size_t n() const {
        return static_cast<size_t>(entries.rows());
    }
    double operator()(size_t i, size_t j) const {
        return entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
};

/// An outcome with vanishing probability but non-vanishing gradient: the FIM
/// diverges or is ill-defined at this phase point.
class SingularSupportError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kZeroProbability = 1e-14;
inline constexpr double kZeroGradient = 1e-10;

/// F_ij = sum_x (dp/dphi_i)(dp/dphi_j) / p. Outcomes with p < 1e-14 and every
/// |gradient| <= 1e-10 are dropped as a removable limit; p < 1e-14 with a larger
/// gradient throws SingularSupportError.
FisherMatrix fisher_matrix(const OutcomeDistribution &dist);

/// Thresholds separating genuinely singular Fisher matrices from float noise.
struct SingularityPolicy {
    double max_condition = 1e10;
    double min_abs_det = 1e-12;
};

/// Either an inverse, or a singular verdict carrying det F and the condition
/// number. Singularity is a value here, not an error.
struct FisherInverse {
    bool singular = false;
    Eigen::MatrixXd inverse;
    double determinant = 0;
    double condition = 0;

    double trace() const {
        return inverse.trace();
    }
    double diag(size_t j) const {
        return inverse(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
    }
};

FisherInverse invert_fisher(const FisherMatrix &f, const SingularityPolicy &policy = {});

/// Mode whose number operator generates each unknown phase.
struct GeneratorSet {
    std::vector<size_t> modes;

    /// Throws std::invalid_argument on repeated or out-of-range modes.
    void validate(size_t dim) const;
};

/// Covariance matrix of the generator number operators in a pure state given
/// as amplitudes over `basis`.
Eigen::MatrixXd generator_covariance(
    const ComplexVector &state, const std::vector<FockState> &basis, const GeneratorSet &gens);

/// Pure-state QFIM for commuting number-operator generators: 4 Cov(N_i, N_j).
/// `state` is the probe after the first multiport. Throws std::invalid_argument
/// if the state is not normalized to 1e-10 or its size differs from the basis.
FisherMatrix qfim_pure(const ComplexVector &state, const std::vector<FockState> &basis, const GeneratorSet &gens);

/// One total-photon-number sector of a block-diagonal mixed state.
struct SectorState {
    std::vector<FockState> basis;
    ComplexVector state;
};

/// QFIM of a mixture of pure states living in distinct photon-number sectors.
/// Number-conserving evolution never couples the sectors, so the SLD formula
/// decomposes into the weighted sum of per-sector pure-state QFIMs. Throws
/// std::invalid_argument if the lists differ in length or the weights do not sum
/// to 1 within 1e-9.
FisherMatrix qfim_sector_mixture(
    const std::vector<double> &weights, const std::vector<SectorState> &sectors, const GeneratorSet &gens);

/// QFIM of a probe after `u_in`: Fock probes use the pure-state formula,
/// distinguishable photons the sum over single-photon QFIMs, and coherent probes
/// (no phase reference) the photon-number sector mixture.
FisherMatrix probe_qfim(const UnitaryMatrix &u_in, const Probe &probe, const GeneratorSet &gens);

struct SeparableBoundParams {
    unsigned photons = 1;
    std::vector<double> g_max;
    std::vector<double> g_min;

    /// Number-operator generators: single-qudit eigenvalues {0, 1}.
    static SeparableBoundParams number_generators(unsigned photons, size_t num_params);
    /// Throws std::invalid_argument unless photons >= 1 and g_max > g_min.
    void validate() const;
};

struct SeparableBounds {
    std::vector<double> fjj_max;
    std::vector<double> inv_diag_min;
    double trace_min = 0;
};

/// F_jj <= N (g_max - g_min)^2, [F^-1]_jj >= 1 / (N (g_max - g_min)^2), and the
/// trace bound as their sum.
SeparableBounds separable_bounds(const SeparableBoundParams &params);

struct WitnessVerdict {
    std::vector<bool> fjj_violation;
    /// Empty when F is singular.
    std::vector<bool> inv_diag_violation;
    /// Undefined when F is singular.
    std::optional<bool> trace_violation;
    std::optional<double> trace_finv;
    bool singular = false;
    /// Any violation: useful qudit entanglement detected.
    bool entangled = false;
};

/// Compares a classical FIM with the separable-state bounds.
WitnessVerdict entanglement_witness(
    const FisherMatrix &f, const SeparableBoundParams &params, const SingularityPolicy &policy = {});

}  // namespace mmzi

#endif
