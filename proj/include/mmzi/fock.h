#ifndef MMZI_FOCK_H
#define MMZI_FOCK_H

#include <compare>
#include <cstddef>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "mmzi/optics.h"

namespace mmzi {

/// Photon occupation numbers, one per mode.
struct FockState {
    std::vector<unsigned> occupations;

    FockState() = default;
    explicit FockState(std::vector<unsigned> occ) : occupations(std::move(occ)) {
    }
    FockState(std::initializer_list<unsigned> occ) : occupations(occ) {
    }

    size_t modes() const {
        return occupations.size();
    }
    unsigned total() const;
    unsigned operator[](size_t mode) const {
        return occupations[mode];
    }

    auto operator<=>(const FockState &) const = default;
};

/// All occupation vectors of `num_photons` photons over `dim` modes, ordered
/// lexicographically descending: (N,0,..,0) first, (0,..,0,N) last.
/// There are C(N+d-1, d-1) of them.
std::vector<FockState> enumerate_fock_basis(size_t dim, unsigned num_photons);

/// Matrix permanent via Ryser's formula with Gray-code subset iteration,
/// O(2^n n). Throws std::invalid_argument for a non-square matrix. The 0x0
/// permanent is 1.
Complex permanent(const ComplexMatrix &m);

/// <output| U |input> for the Fock-space representation of the single-particle
/// unitary `u`: perm(U[out rows, in cols]) / sqrt(prod n_i! prod m_j!). Zero when
/// photon numbers differ.
Complex transition_amplitude(const ComplexMatrix &u, const FockState &input, const FockState &output);

/// Transition matrix of `u` restricted to the `num_photons` sector, indexed by
/// enumerate_fock_basis(dim, num_photons): element (x, m) = <x|U|m>.
ComplexMatrix fock_sector_matrix(const ComplexMatrix &u, unsigned num_photons);

/// Column of fock_sector_matrix for one input state: the state U|input>.
ComplexVector fock_sector_state(const ComplexMatrix &u, const FockState &input);

enum class ProbeKind { Fock, Coherent, Distinguishable };

struct Probe {
    ProbeKind kind = ProbeKind::Fock;
    FockState occupations;  // fock, distinguishable
    double alpha = 0;       // coherent
    size_t input_mode = 0;  // coherent

    static Probe fock(FockState occ);
    static Probe distinguishable(FockState occ);
    static Probe coherent(double alpha, size_t input_mode);

    /// One photon per mode.
    static Probe single_photons(size_t dim);

    /// Throws std::invalid_argument if the probe is malformed for `dim` modes.
    void validate(size_t dim) const;
    /// Mean photon number.
    double mean_photons() const;
};

const char *probe_kind_name(ProbeKind kind);

/// Outcome probabilities and their gradients with respect to the unknown
/// phases (grads row k = outcome k, column j = d/d phi_j).
struct OutcomeDistribution {
    std::vector<FockState> outcomes;
    std::vector<double> probs;
    Eigen::MatrixXd grads;
    PhaseConfig phases;

    size_t size() const {
        return probs.size();
    }
};

/// Smallest N with P(Poisson(mean) > N) < tail_tolerance.
unsigned poisson_truncation(double mean, double tail_tolerance);

/// Photon-counting statistics of a fixed probe through u_out . D(phases) . u_in.
///
/// Everything independent of the phases is computed once at construction, so a
/// model can be evaluated at many phase points cheaply. Instances are immutable
/// and safe to share between threads.
class OutcomeModel {
   public:
    static constexpr double kDefaultCoherentTail = 1e-11;

    /// Throws std::invalid_argument on dimension mismatch or an invalid probe.
    OutcomeModel(UnitaryMatrix u_in, UnitaryMatrix u_out, Probe probe, double coherent_tail = kDefaultCoherentTail);

    size_t dim() const {
        return u_in_.dim();
    }
    const Probe &probe() const {
        return probe_;
    }
    const UnitaryMatrix &input_unitary() const {
        return u_in_;
    }
    const UnitaryMatrix &output_unitary() const {
        return u_out_;
    }
    const std::vector<FockState> &outcomes() const {
        return outcomes_;
    }
    size_t num_outcomes() const {
        return outcomes_.size();
    }
    /// Index of `state` in outcomes(), or -1.
    long index_of(const FockState &state) const;
    /// Coherent probes only: largest total photon number kept.
    unsigned truncation() const {
        return truncation_;
    }

    OutcomeDistribution distribution(const PhaseConfig &config) const;
    /// Probabilities only (no gradients); same ordering as outcomes().
    void probabilities(const PhaseConfig &config, std::vector<double> &out) const;

   private:
    void fock_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes, double *probs,
                           Eigen::MatrixXd *grads) const;
    void distinguishable_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes,
                                      double *probs, Eigen::MatrixXd *grads) const;
    void coherent_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes, double *probs,
                               Eigen::MatrixXd *grads) const;

    UnitaryMatrix u_in_;
    UnitaryMatrix u_out_;
    Probe probe_;
    std::vector<FockState> outcomes_;
    std::map<FockState, size_t> index_;
    unsigned truncation_ = 0;

    // Fock probes: intermediate basis, amplitudes after u_in, u_out sector matrix.
    Eigen::MatrixXd mid_occupations_;
    ComplexVector mid_state_;
    ComplexMatrix out_sector_;

    // Distinguishable probes: input mode of every photon.
    std::vector<size_t> photon_modes_;
};

/// Fock or distinguishable probe through u_out . D . u_in. Throws
/// std::invalid_argument for a coherent probe.
OutcomeDistribution outcome_distribution(
    const UnitaryMatrix &u_in, const PhaseConfig &config, const UnitaryMatrix &u_out, const Probe &probe);

/// Coherent probe: product of Poisson distributions truncated at total photon
/// number N_max with tail mass below `tail_tolerance`. Throws
/// std::invalid_argument for a non-coherent probe.
OutcomeDistribution coherent_distribution(
    const UnitaryMatrix &u_in,
    const PhaseConfig &config,
    const UnitaryMatrix &u_out,
    const Probe &probe,
    double tail_tolerance = OutcomeModel::kDefaultCoherentTail);

}  // namespace mmzi

#endif
