#ifndef MMZI_OPTICS_H
#define MMZI_OPTICS_H

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace mmzi {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline constexpr double kPi = 3.141592653589793238462643383279;

/// Maximum absolute entry of U^dagger U - identity.
double unitarity_defect(const ComplexMatrix &u);

/// Reduces an angle to [0, 2pi).
double reduce_phase(double phase);

/// Signed angular difference a - b wrapped into [-pi, pi).
double wrapped_difference(double a, double b);

/// A d x d unitary acting on optical modes.
///
/// Construction checks unitarity to 1e-12 so every instance carries the
/// invariant. Products of UnitaryMatrix values are re-checked.
class UnitaryMatrix {
   public:
    static constexpr double kTolerance = 1e-12;

    /// Throws std::invalid_argument if `m` is not square, has dim < 1, or is
    /// not unitary to `kTolerance`.
    explicit UnitaryMatrix(ComplexMatrix m);

    static UnitaryMatrix identity(size_t dim);

    size_t dim() const {
        return static_cast<size_t>(matrix_.rows());
    }
    const ComplexMatrix &matrix() const {
        return matrix_;
    }
    Complex operator()(size_t row, size_t col) const {
        return matrix_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
    }

    UnitaryMatrix operator*(const UnitaryMatrix &rhs) const;

   private:
    ComplexMatrix matrix_;
};

enum class MultiportKind { Tritter, Quarter };

/// Balanced multiport splitter: tritter (d=3) has 3^(-1/2) on the diagonal and
/// 3^(-1/2) e^(i 2pi/3) elsewhere; quarter (d=4) has 1/2 on the diagonal and -1/2
/// elsewhere. Throws std::invalid_argument for any other (d, kind) pair.
UnitaryMatrix multiport_unitary(size_t dim, MultiportKind kind);

struct ModePhase {
    size_t mode;
    double value;
};

/// Phases applied between the two multiports.
///
/// `unknown` holds the parameters being estimated, `control` holds known phase
/// shifts (adaptive offsets and the fixed reference phase). Mode indices are
/// distinct within each list; a mode may carry one unknown and one control
/// phase, in which case they add. Values are stored reduced to [0, 2pi).
class PhaseConfig {
   public:
    PhaseConfig() = default;
    /// Throws std::invalid_argument on a duplicate mode within either list.
    PhaseConfig(std::vector<ModePhase> unknown, std::vector<ModePhase> control);

    const std::vector<ModePhase> &unknown() const {
        return unknown_;
    }
    const std::vector<ModePhase> &control() const {
        return control_;
    }
    size_t num_unknown() const {
        return unknown_.size();
    }
    std::vector<size_t> unknown_modes() const;
    std::vector<double> unknown_values() const;

    /// Total phase per mode for a `dim`-mode circuit. Throws
    /// std::invalid_argument if a mode index is >= dim.
    Eigen::VectorXd mode_phases(size_t dim) const;

    /// Same modes, new unknown values (reduced).
    PhaseConfig with_unknown_values(const std::vector<double> &values) const;

   private:
    std::vector<ModePhase> unknown_;
    std::vector<ModePhase> control_;
};

/// Diagonal matrix with e^(-i theta_j) on mode j.
UnitaryMatrix phase_layer(size_t dim, const PhaseConfig &config);

/// u_out * phase_layer(config) * u_in. Throws std::invalid_argument on a dimension
/// mismatch.
UnitaryMatrix compose_interferometer(
    const UnitaryMatrix &u_in, const PhaseConfig &config, const UnitaryMatrix &u_out);

/// Multiarm Mach-Zehnder interferometer with the same
/// balanced multiport at input and output, unknown phases on modes 0 and 1, and
/// for four modes the known reference phase phi0 on mode 2 (mode 3 is the phase
/// reference).
struct MmziSetup {
    UnitaryMatrix splitter;
    std::vector<size_t> unknown_modes;
    std::vector<ModePhase> fixed_controls;

    static MmziSetup three_mode();
    static MmziSetup four_mode(double phi0);

    size_t dim() const {
        return splitter.dim();
    }
    size_t num_unknown() const {
        return unknown_modes.size();
    }
    double phi0() const;

    /// Phase configuration with the given unknown values and adaptive offsets
    /// `psi` on the unknown modes (empty psi means zero offsets).
    PhaseConfig config(const std::vector<double> &phis, const std::vector<double> &psi = {}) const;
};

}  // namespace mmzi

#endif
