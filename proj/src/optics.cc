#include "mmzi/optics.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mmzi {

double unitarity_defect(const ComplexMatrix &u) {
    if (u.rows() != u.cols()) {
        throw std::invalid_argument("unitarity_defect: matrix is not square");
    }
    ComplexMatrix g = u.adjoint() * u;
    g -= ComplexMatrix::Identity(u.rows(), u.cols());
    return g.cwiseAbs().maxCoeff();
}

double reduce_phase(double phase) {
    double r = std::fmod(phase, kTwoPi);
    if (r < 0) {
        r += kTwoPi;
    }
    // fmod of a tiny negative number can round up to exactly 2pi.
    if (r >= kTwoPi) {
        r = 0;
    }
    return r;
}

double wrapped_difference(double a, double b) {
    double d = reduce_phase(a - b);
    if (d >= kPi) {
        d -= kTwoPi;
    }
    return d;
}

UnitaryMatrix::UnitaryMatrix(ComplexMatrix m) : matrix_(std::move(m)) {
    if (matrix_.rows() < 1 || matrix_.rows() != matrix_.cols()) {
        throw std::invalid_argument("UnitaryMatrix: expected a non-empty square matrix");
    }
    double defect = unitarity_defect(matrix_);
    if (!(defect < kTolerance)) {
        throw std::invalid_argument("UnitaryMatrix: unitarity defect " + std::to_string(defect) + " exceeds 1e-12");
    }
}

UnitaryMatrix UnitaryMatrix::identity(size_t dim) {
    auto d = static_cast<Eigen::Index>(dim);
    return UnitaryMatrix(ComplexMatrix::Identity(d, d));
}

UnitaryMatrix UnitaryMatrix::operator*(const UnitaryMatrix &rhs) const {
    if (dim() != rhs.dim()) {
        throw std::invalid_argument("UnitaryMatrix product: dimension mismatch");
    }
    return UnitaryMatrix(matrix_ * rhs.matrix_);
}

UnitaryMatrix multiport_unitary(size_t dim, MultiportKind kind) {
    auto d = static_cast<Eigen::Index>(dim);
    if (kind == MultiportKind::Tritter && dim == 3) {
        const double s = 1.0 / std::sqrt(3.0);
        const Complex off = s * std::polar(1.0, kTwoPi / 3.0);
        ComplexMatrix m = ComplexMatrix::Constant(d, d, off);
        m.diagonal().setConstant(s);
        return UnitaryMatrix(std::move(m));
    }
    if (kind == MultiportKind::Quarter && dim == 4) {
        ComplexMatrix m = ComplexMatrix::Constant(d, d, -0.5);
        m.diagonal().setConstant(0.5);
        return UnitaryMatrix(std::move(m));
    }
    throw std::invalid_argument(
        "multiport_unitary: unsupported pair (d=" + std::to_string(dim) + ", " +
        (kind == MultiportKind::Tritter ? "tritter" : "quarter") + ")");
}

namespace {

void check_distinct(const std::vector<ModePhase> &phases, const char *which) {
    for (size_t i = 0; i < phases.size(); i++) {
        for (size_t j = i + 1; j < phases.size(); j++) {
            if (phases[i].mode == phases[j].mode) {
                throw std::invalid_argument(
                    std::string("PhaseConfig: duplicate mode ") + std::to_string(phases[i].mode) + " in " + which +
                    " phases");
            }
        }
    }
}

}  // namespace

PhaseConfig::PhaseConfig(std::vector<ModePhase> unknown, std::vector<ModePhase> control)
    : unknown_(std::move(unknown)), control_(std::move(control)) {
    check_distinct(unknown_, "unknown");
    check_distinct(control_, "control");
    for (auto &p : unknown_) {
        p.value = reduce_phase(p.value);
    }
    for (auto &p : control_) {
        p.value = reduce_phase(p.value);
    }
}

std::vector<size_t> PhaseConfig::unknown_modes() const {
    std::vector<size_t> out;
    out.reserve(unknown_.size());
    for (const auto &p : unknown_) {
        out.push_back(p.mode);
    }
    return out;
}

std::vector<double> PhaseConfig::unknown_values() const {
    std::vector<double> out;
    out.reserve(unknown_.size());
    for (const auto &p : unknown_) {
        out.push_back(p.value);
    }
    return out;
}

Eigen::VectorXd PhaseConfig::mode_phases(size_t dim) const {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    auto add = [&](const std::vector<ModePhase> &list) {
        for (const auto &p : list) {
            if (p.mode >= dim) {
                throw std::invalid_argument(
                    "PhaseConfig: mode index " + std::to_string(p.mode) + " out of range for " +
                    std::to_string(dim) + " modes");
            }
            theta[static_cast<Eigen::Index>(p.mode)] += p.value;
        }
    };
    add(unknown_);
    add(control_);
    return theta;
}

PhaseConfig PhaseConfig::with_unknown_values(const std::vector<double> &values) const {
    if (values.size() != unknown_.size()) {
        throw std::invalid_argument("PhaseConfig::with_unknown_values: wrong number of values");
    }
    std::vector<ModePhase> unknown = unknown_;
    for (size_t k = 0; k < unknown.size(); k++) {
        unknown[k].value = values[k];
    }
    return PhaseConfig(std::move(unknown), control_);
}

UnitaryMatrix phase_layer(size_t dim, const PhaseConfig &config) {
    Eigen::VectorXd theta = config.mode_phases(dim);
    ComplexMatrix m = ComplexMatrix::Zero(theta.size(), theta.size());
    for (Eigen::Index j = 0; j < theta.size(); j++) {
        m(j, j) = std::polar(1.0, -theta[j]);
    }
    return UnitaryMatrix(std::move(m));
}

UnitaryMatrix compose_interferometer(
    const UnitaryMatrix &u_in, const PhaseConfig &config, const UnitaryMatrix &u_out) {
    if (u_in.dim() != u_out.dim()) {
        throw std::invalid_argument("compose_interferometer: input and output dimensions differ");
    }
    return u_out * (phase_layer(u_in.dim(), config) * u_in);
}

MmziSetup MmziSetup::three_mode() {
    return MmziSetup{multiport_unitary(3, MultiportKind::Tritter), {0, 1}, {}};
}

MmziSetup MmziSetup::four_mode(double phi0) {
    return MmziSetup{multiport_unitary(4, MultiportKind::Quarter), {0, 1}, {{2, phi0}}};
}

double MmziSetup::phi0() const {
    return fixed_controls.empty() ? 0.0 : fixed_controls.front().value;
}

PhaseConfig MmziSetup::config(const std::vector<double> &phis, const std::vector<double> &psi) const {
    if (phis.size() != unknown_modes.size() || (!psi.empty() && psi.size() != unknown_modes.size())) {
        throw std::invalid_argument("MmziSetup::config: wrong number of phases");
    }
    std::vector<ModePhase> unknown;
    std::vector<ModePhase> control = fixed_controls;
    for (size_t k = 0; k < unknown_modes.size(); k++) {
        unknown.push_back({unknown_modes[k], phis[k]});
        if (!psi.empty() && psi[k] != 0.0) {
            control.push_back({unknown_modes[k], psi[k]});
        }
    }
    return PhaseConfig(std::move(unknown), std::move(control));
}

}  // namespace mmzi
