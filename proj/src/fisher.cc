#include "mmzi/fisher.h"

#include <cmath>
#include <limits>
#include <string>

namespace mmzi {

FisherMatrix fisher_matrix(const OutcomeDistribution &dist) {
    const Eigen::Index n = dist.grads.cols();
    FisherMatrix f{Eigen::MatrixXd::Zero(n, n), FisherKind::Classical};
    for (size_t x = 0; x < dist.probs.size(); x++) {
        const double p = dist.probs[x];
        const auto g = dist.grads.row(static_cast<Eigen::Index>(x));
        if (p < kZeroProbability) {
            if (n == 0 || g.cwiseAbs().maxCoeff() <= kZeroGradient) {
                continue;
            }
            throw SingularSupportError(
                "fisher_matrix: outcome " + std::to_string(x) + " has p=" + std::to_string(p) +
                " with non-vanishing gradient");
        }
        f.entries.noalias() += g.transpose() * g / p;
    }
    f.entries = 0.5 * (f.entries + f.entries.transpose()).eval();
    return f;
}

FisherInverse invert_fisher(const FisherMatrix &f, const SingularityPolicy &policy) {
    FisherInverse out;
    const Eigen::Index n = f.entries.rows();
    if (n == 0) {
        out.determinant = 1;
        out.condition = 1;
        out.inverse = Eigen::MatrixXd(0, 0);
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f.entries);
    const Eigen::VectorXd vals = eig.eigenvalues();
    out.determinant = f.entries.determinant();
    const double lo = vals.minCoeff();
    const double hi = vals.maxCoeff();
    out.condition = lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(out.condition < policy.max_condition) || !(std::abs(out.determinant) >= policy.min_abs_det)) {
        out.singular = true;
        return out;
    }
    out.inverse = eig.eigenvectors() * vals.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return out;
}

void GeneratorSet::validate(size_t dim) const {
    for (size_t i = 0; i < modes.size(); i++) {
        if (modes[i] >= dim) {
            throw std::invalid_argument("GeneratorSet: mode out of range");
        }
        for (size_t j = i + 1; j < modes.size(); j++) {
            if (modes[i] == modes[j]) {
                throw std::invalid_argument("GeneratorSet: repeated mode");
            }
        }
    }
}

Eigen::MatrixXd generator_covariance(
    const ComplexVector &state, const std::vector<FockState> &basis, const GeneratorSet &gens) {
    if (static_cast<size_t>(state.size()) != basis.size()) {
        throw std::invalid_argument("generator_covariance: state and basis sizes differ");
    }
    if (!basis.empty()) {
        gens.validate(basis.front().modes());
    }
    const auto n = static_cast<Eigen::Index>(gens.modes.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
    for (size_t s = 0; s < basis.size(); s++) {
        const double w = std::norm(state[static_cast<Eigen::Index>(s)]);
        Eigen::VectorXd occ(n);
        for (Eigen::Index j = 0; j < n; j++) {
            occ[j] = basis[s][gens.modes[static_cast<size_t>(j)]];
        }
        mean += w * occ;
        second += w * occ * occ.transpose();
    }
    return second - mean * mean.transpose();
}

FisherMatrix qfim_pure(const ComplexVector &state, const std::vector<FockState> &basis, const GeneratorSet &gens) {
    if (std::abs(state.squaredNorm() - 1.0) > 1e-10) {
        throw std::invalid_argument("qfim_pure: state is not normalized");
    }
    return FisherMatrix{4.0 * generator_covariance(state, basis, gens), FisherKind::Quantum};
}

FisherMatrix qfim_sector_mixture(
    const std::vector<double> &weights, const std::vector<SectorState> &sectors, const GeneratorSet &gens) {
    if (weights.size() != sectors.size() || weights.empty()) {
        throw std::invalid_argument("qfim_sector_mixture: weights and sectors differ in length");
    }
    double total = 0;
    for (double w : weights) {
        if (w < 0) {
            throw std::invalid_argument("qfim_sector_mixture: negative weight");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("qfim_sector_mixture: weights sum to " + std::to_string(total));
    }
    const auto n = static_cast<Eigen::Index>(gens.modes.size());
    FisherMatrix f{Eigen::MatrixXd::Zero(n, n), FisherKind::Quantum};
    for (size_t k = 0; k < sectors.size(); k++) {
        if (weights[k] == 0) {
            continue;
        }
        f.entries += weights[k] * qfim_pure(sectors[k].state, sectors[k].basis, gens).entries;
    }
    return f;
}

FisherMatrix probe_qfim(const UnitaryMatrix &u_in, const Probe &probe, const GeneratorSet &gens) {
    const size_t d = u_in.dim();
    probe.validate(d);
    gens.validate(d);
    switch (probe.kind) {
        case ProbeKind::Fock: {
            return qfim_pure(
                fock_sector_state(u_in.matrix(), probe.occupations),
                enumerate_fock_basis(d, probe.occupations.total()),
                gens);
        }
        case ProbeKind::Distinguishable: {
            const auto n = static_cast<Eigen::Index>(gens.modes.size());
            FisherMatrix f{Eigen::MatrixXd::Zero(n, n), FisherKind::Quantum};
            const auto basis = enumerate_fock_basis(d, 1);
            for (size_t k = 0; k < d; k++) {
                std::vector<unsigned> occ(d, 0);
                occ[k] = 1;
                const ComplexVector single = fock_sector_state(u_in.matrix(), FockState(occ));
                f.entries += probe.occupations[k] * qfim_pure(single, basis, gens).entries;
            }
            return f;
        }
        case ProbeKind::Coherent: {
            const double mean = probe.mean_photons();
            const unsigned top = poisson_truncation(mean, 1e-13);
            std::vector<double> weights;
            std::vector<SectorState> sectors;
            double w = std::exp(-mean);
            for (unsigned n = 0; n <= top; n++) {
                if (n > 0) {
                    w *= mean / n;
                }
                std::vector<unsigned> occ(d, 0);
                occ[probe.input_mode] = n;
                weights.push_back(w);
                sectors.push_back(
                    SectorState{enumerate_fock_basis(d, n), fock_sector_state(u_in.matrix(), FockState(occ))});
            }
            return qfim_sector_mixture(weights, sectors, gens);
        }
    }
    throw std::invalid_argument("probe_qfim: unknown probe kind");
}

SeparableBoundParams SeparableBoundParams::number_generators(unsigned photons, size_t num_params) {
    return SeparableBoundParams{photons, std::vector<double>(num_params, 1.0), std::vector<double>(num_params, 0.0)};
}

void SeparableBoundParams::validate() const {
    if (photons < 1) {
        throw std::invalid_argument("SeparableBoundParams: need N >= 1");
    }
    if (g_max.size() != g_min.size()) {
        throw std::invalid_argument("SeparableBoundParams: g_max and g_min differ in length");
    }
    for (size_t j = 0; j < g_max.size(); j++) {
        if (!(g_max[j] > g_min[j])) {
            throw std::invalid_argument("SeparableBoundParams: need g_max > g_min");
        }
    }
}

SeparableBounds separable_bounds(const SeparableBoundParams &params) {
    params.validate();
    SeparableBounds out;
    for (size_t j = 0; j < params.g_max.size(); j++) {
        const double spread = params.g_max[j] - params.g_min[j];
        const double fmax = params.photons * spread * spread;
        out.fjj_max.push_back(fmax);
        out.inv_diag_min.push_back(1.0 / fmax);
        out.trace_min += 1.0 / fmax;
    }
    return out;
}

WitnessVerdict entanglement_witness(
    const FisherMatrix &f, const SeparableBoundParams &params, const SingularityPolicy &policy) {
    const SeparableBounds bounds = separable_bounds(params);
    if (bounds.fjj_max.size() != f.n()) {
        throw std::invalid_argument("entanglement_witness: parameter count mismatch");
    }
    // Relative slack so that exact saturation is not reported as a violation.
    constexpr double kSlack = 1e-9;
    WitnessVerdict v;
    for (size_t j = 0; j < f.n(); j++) {
        const bool hit = f(j, j) > bounds.fjj_max[j] * (1 + kSlack);
        v.fjj_violation.push_back(hit);
        v.entangled = v.entangled || hit;
    }
    const FisherInverse inv = invert_fisher(f, policy);
    v.singular = inv.singular;
    if (!inv.singular) {
        for (size_t j = 0; j < f.n(); j++) {
            const bool hit = inv.diag(j) < bounds.inv_diag_min[j] * (1 - kSlack);
            v.inv_diag_violation.push_back(hit);
            v.entangled = v.entangled || hit;
        }
        v.trace_finv = inv.trace();
        v.trace_violation = inv.trace() < bounds.trace_min * (1 - kSlack);
        v.entangled = v.entangled || *v.trace_violation;
    }
    return v;
}

}  // namespace mmzi
