#include "mmzi/fock.h"

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmzi {

unsigned FockState::total() const {
    unsigned n = 0;
    for (unsigned k : occupations) {
        n += k;
    }
    return n;
}

namespace {

void enumerate_recursive(
    size_t dim, unsigned remaining, std::vector<unsigned> &prefix, std::vector<FockState> &out) {
    if (prefix.size() + 1 == dim) {
        prefix.push_back(remaining);
        out.emplace_back(prefix);
        prefix.pop_back();
        return;
    }
    for (unsigned n = remaining + 1; n-- > 0;) {
        prefix.push_back(n);
        enumerate_recursive(dim, remaining - n, prefix, out);
        prefix.pop_back();
    }
}

double factorial(unsigned n) {
    double f = 1;
    for (unsigned k = 2; k <= n; k++) {
        f *= k;
    }
    return f;
}

}  // namespace

std::vector<FockState> enumerate_fock_basis(size_t dim, unsigned num_photons) {
    if (dim == 0) {
        throw std::invalid_argument("enumerate_fock_basis: need at least one mode");
    }
    std::vector<FockState> out;
    std::vector<unsigned> prefix;
    prefix.reserve(dim);
    enumerate_recursive(dim, num_photons, prefix, out);
    return out;
}

Complex permanent(const ComplexMatrix &m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("permanent: matrix is not square");
    }
    const auto n = static_cast<size_t>(m.rows());
    if (n == 0) {
        return 1.0;
    }
    if (n > 30) {
        throw std::invalid_argument("permanent: matrix too large");
    }
    std::vector<Complex> row_sums(n, 0.0);
    Complex total = 0.0;
    uint64_t gray = 0;
    const uint64_t count = uint64_t{1} << n;
    for (uint64_t k = 1; k < count; k++) {
        const auto col = static_cast<Eigen::Index>(std::countr_zero(k));
        const uint64_t bit = uint64_t{1} << col;
        gray ^= bit;
        const bool added = (gray & bit) != 0;
        Complex prod = 1.0;
        for (size_t i = 0; i < n; i++) {
            const Complex a = m(static_cast<Eigen::Index>(i), col);
            row_sums[i] += added ? a : -a;
            prod *= row_sums[i];
        }
        total += (std::popcount(gray) % 2 == 1) ? -prod : prod;
    }
    return (n % 2 == 1) ? -total : total;
}

Complex transition_amplitude(const ComplexMatrix &u, const FockState &input, const FockState &output) {
    if (input.modes() != static_cast<size_t>(u.cols()) || output.modes() != static_cast<size_t>(u.rows())) {
        throw std::invalid_argument("transition_amplitude: state and matrix dimensions differ");
    }
    const unsigned n = input.total();
    if (n != output.total()) {
        return 0.0;
    }
    // All photons in one mode on either side: every column (or row) of the
    // submatrix is the same, so the permanent is N! times a plain product.
    auto single_mode = [](const FockState &s) -> long {
        long found = -1;
        for (size_t k = 0; k < s.modes(); k++) {
            if (s[k] > 0) {
                if (found >= 0) {
                    return -1;
                }
                found = static_cast<long>(k);
            }
        }
        return found;
    };
    const long in_mode = single_mode(input);
    const long out_mode = in_mode >= 0 ? -1 : single_mode(output);
    if (n > 0 && (in_mode >= 0 || out_mode >= 0)) {
        const FockState &spread = in_mode >= 0 ? output : input;
        Complex amp = 1.0;
        double log_norm = std::lgamma(n + 1.0);
        for (size_t k = 0; k < spread.modes(); k++) {
            const Complex entry = in_mode >= 0 ? u(static_cast<Eigen::Index>(k), in_mode)
                                               : u(out_mode, static_cast<Eigen::Index>(k));
            amp *= std::pow(entry, static_cast<int>(spread[k]));
            log_norm -= std::lgamma(spread[k] + 1.0);
        }
        return amp * std::exp(0.5 * log_norm);
    }
    std::vector<Eigen::Index> rows;
    std::vector<Eigen::Index> cols;
    double norm = 1;
    for (size_t k = 0; k < output.modes(); k++) {
        rows.insert(rows.end(), output[k], static_cast<Eigen::Index>(k));
        norm *= factorial(output[k]);
    }
    for (size_t k = 0; k < input.modes(); k++) {
        cols.insert(cols.end(), input[k], static_cast<Eigen::Index>(k));
        norm *= factorial(input[k]);
    }
    ComplexMatrix sub(n, n);
    for (unsigned r = 0; r < n; r++) {
        for (unsigned c = 0; c < n; c++) {
            sub(r, c) = u(rows[r], cols[c]);
        }
    }
    return permanent(sub) / std::sqrt(norm);
}

ComplexMatrix fock_sector_matrix(const ComplexMatrix &u, unsigned num_photons) {
    const auto basis = enumerate_fock_basis(static_cast<size_t>(u.rows()), num_photons);
    const auto s = static_cast<Eigen::Index>(basis.size());
    ComplexMatrix out(s, s);
    for (Eigen::Index x = 0; x < s; x++) {
        for (Eigen::Index m = 0; m < s; m++) {
            out(x, m) = transition_amplitude(u, basis[m], basis[x]);
        }
    }
    return out;
}

ComplexVector fock_sector_state(const ComplexMatrix &u, const FockState &input) {
    const auto basis = enumerate_fock_basis(static_cast<size_t>(u.rows()), input.total());
    ComplexVector out(static_cast<Eigen::Index>(basis.size()));
    for (size_t x = 0; x < basis.size(); x++) {
        out[static_cast<Eigen::Index>(x)] = transition_amplitude(u, input, basis[x]);
    }
    return out;
}

Probe Probe::fock(FockState occ) {
    Probe p;
    p.kind = ProbeKind::Fock;
    p.occupations = std::move(occ);
    return p;
}

Probe Probe::distinguishable(FockState occ) {
    Probe p;
    p.kind = ProbeKind::Distinguishable;
    p.occupations = std::move(occ);
    return p;
}

Probe Probe::coherent(double alpha, size_t input_mode) {
    Probe p;
    p.kind = ProbeKind::Coherent;
    p.alpha = alpha;
    p.input_mode = input_mode;
    return p;
}

Probe Probe::single_photons(size_t dim) {
    return fock(FockState(std::vector<unsigned>(dim, 1)));
}

void Probe::validate(size_t dim) const {
    if (kind == ProbeKind::Coherent) {
        if (!(alpha > 0) || !std::isfinite(alpha)) {
            throw std::invalid_argument("coherent probe needs alpha > 0");
        }
        if (input_mode >= dim) {
            throw std::invalid_argument("coherent probe input mode out of range");
        }
        return;
    }
    if (occupations.modes() != dim) {
        throw std::invalid_argument(
            "probe has " + std::to_string(occupations.modes()) + " modes, circuit has " + std::to_string(dim));
    }
    if (occupations.total() < 1) {
        throw std::invalid_argument("probe needs at least one photon");
    }
}

double Probe::mean_photons() const {
    return kind == ProbeKind::Coherent ? alpha * alpha : static_cast<double>(occupations.total());
}

const char *probe_kind_name(ProbeKind kind) {
    switch (kind) {
        case ProbeKind::Fock:
            return "fock";
        case ProbeKind::Coherent:
            return "coherent";
        case ProbeKind::Distinguishable:
            return "distinguishable";
    }
    return "?";
}

unsigned poisson_truncation(double mean, double tail_tolerance) {
    const auto top = static_cast<unsigned>(mean + 40 + 20 * std::sqrt(mean));
    std::vector<double> pmf(top + 1);
    pmf[0] = std::exp(-mean);
    for (unsigned n = 1; n <= top; n++) {
        pmf[n] = pmf[n - 1] * mean / n;
    }
    // tail[n] = P(X > n), accumulated from the top to avoid cancellation.
    std::vector<double> tail(top + 1, 0.0);
    for (unsigned n = top; n-- > 0;) {
        tail[n] = tail[n + 1] + pmf[n + 1];
    }
    for (unsigned n = 0; n <= top; n++) {
        if (tail[n] < tail_tolerance) {
            return n;
        }
    }
    return top;
}

OutcomeModel::OutcomeModel(UnitaryMatrix u_in, UnitaryMatrix u_out, Probe probe, double coherent_tail)
    : u_in_(std::move(u_in)), u_out_(std::move(u_out)), probe_(std::move(probe)) {
    if (u_in_.dim() != u_out_.dim()) {
        throw std::invalid_argument("OutcomeModel: input and output dimensions differ");
    }
    const size_t d = u_in_.dim();
    probe_.validate(d);

    if (probe_.kind == ProbeKind::Coherent) {
        truncation_ = poisson_truncation(probe_.mean_photons(), coherent_tail);
        for (unsigned n = 0; n <= truncation_; n++) {
            auto sector = enumerate_fock_basis(d, n);
            outcomes_.insert(outcomes_.end(), sector.begin(), sector.end());
        }
    } else {
        const unsigned n = probe_.occupations.total();
        outcomes_ = enumerate_fock_basis(d, n);
        if (probe_.kind == ProbeKind::Fock) {
            mid_state_ = fock_sector_state(u_in_.matrix(), probe_.occupations);
            out_sector_ = fock_sector_matrix(u_out_.matrix(), n);
            mid_occupations_.resize(static_cast<Eigen::Index>(outcomes_.size()), static_cast<Eigen::Index>(d));
            for (size_t s = 0; s < outcomes_.size(); s++) {
                for (size_t k = 0; k < d; k++) {
                    mid_occupations_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = outcomes_[s][k];
                }
            }
        } else {
            for (size_t k = 0; k < d; k++) {
                photon_modes_.insert(photon_modes_.end(), probe_.occupations[k], k);
            }
        }
    }
    for (size_t i = 0; i < outcomes_.size(); i++) {
        index_.emplace(outcomes_[i], i);
    }
}

long OutcomeModel::index_of(const FockState &state) const {
    auto it = index_.find(state);
    return it == index_.end() ? -1 : static_cast<long>(it->second);
}

OutcomeDistribution OutcomeModel::distribution(const PhaseConfig &config) const {
    const Eigen::VectorXd theta = config.mode_phases(dim());
    const std::vector<size_t> modes = config.unknown_modes();
    OutcomeDistribution dist;
    dist.outcomes = outcomes_;
    dist.probs.assign(outcomes_.size(), 0.0);
    dist.grads = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(outcomes_.size()),
                                       static_cast<Eigen::Index>(modes.size()));
    dist.phases = config;
    switch (probe_.kind) {
        case ProbeKind::Fock:
            fock_distribution(theta, modes, dist.probs.data(), &dist.grads);
            break;
        case ProbeKind::Distinguishable:
            distinguishable_distribution(theta, modes, dist.probs.data(), &dist.grads);
            break;
        case ProbeKind::Coherent:
            coherent_distribution(theta, modes, dist.probs.data(), &dist.grads);
            break;
    }
    return dist;
}

void OutcomeModel::probabilities(const PhaseConfig &config, std::vector<double> &out) const {
    const Eigen::VectorXd theta = config.mode_phases(dim());
    out.assign(outcomes_.size(), 0.0);
    const std::vector<size_t> none;
    switch (probe_.kind) {
        case ProbeKind::Fock:
            fock_distribution(theta, none, out.data(), nullptr);
            break;
        case ProbeKind::Distinguishable:
            distinguishable_distribution(theta, none, out.data(), nullptr);
            break;
        case ProbeKind::Coherent:
            coherent_distribution(theta, none, out.data(), nullptr);
            break;
    }
}

void OutcomeModel::fock_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes,
                                     double *probs, Eigen::MatrixXd *grads) const {
    const Eigen::VectorXd accumulated = mid_occupations_ * theta;
    ComplexVector weighted(mid_state_.size());
    for (Eigen::Index s = 0; s < mid_state_.size(); s++) {
        weighted[s] = std::polar(1.0, -accumulated[s]) * mid_state_[s];
    }
    const ComplexVector amps = out_sector_ * weighted;
    for (Eigen::Index x = 0; x < amps.size(); x++) {
        probs[x] = std::norm(amps[x]);
    }
    if (grads == nullptr) {
        return;
    }
    const Complex minus_i(0.0, -1.0);
    for (size_t j = 0; j < modes.size(); j++) {
        const auto col = static_cast<Eigen::Index>(modes[j]);
        ComplexVector dv = (minus_i * mid_occupations_.col(col).cast<Complex>()).cwiseProduct(weighted);
        const ComplexVector damps = out_sector_ * dv;
        for (Eigen::Index x = 0; x < amps.size(); x++) {
            (*grads)(x, static_cast<Eigen::Index>(j)) = 2.0 * std::real(std::conj(amps[x]) * damps[x]);
        }
    }
}

void OutcomeModel::distinguishable_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes,
                                                double *probs, Eigen::MatrixXd *grads) const {
    const auto d = static_cast<Eigen::Index>(dim());
    const auto n_par = static_cast<Eigen::Index>(modes.size());
    const ComplexMatrix &a = u_in_.matrix();
    const ComplexMatrix &b = u_out_.matrix();
    ComplexVector phase(d);
    for (Eigen::Index k = 0; k < d; k++) {
        phase[k] = std::polar(1.0, -theta[k]);
    }
    const ComplexMatrix total = b * phase.asDiagonal() * a;

    // Convolve photon by photon; `cur` is indexed by the basis of the photons
    // placed so far.
    std::vector<FockState> cur_basis = enumerate_fock_basis(dim(), 0);
    std::vector<double> cur_p{1.0};
    Eigen::MatrixXd cur_g = Eigen::MatrixXd::Zero(1, n_par);
    const bool with_grads = grads != nullptr;
    for (size_t q = 0; q < photon_modes_.size(); q++) {
        const auto src = static_cast<Eigen::Index>(photon_modes_[q]);
        Eigen::VectorXd single_p(d);
        Eigen::MatrixXd single_g = Eigen::MatrixXd::Zero(d, n_par);
        for (Eigen::Index x = 0; x < d; x++) {
            const Complex u = total(x, src);
            single_p[x] = std::norm(u);
            if (with_grads) {
                for (Eigen::Index j = 0; j < n_par; j++) {
                    const auto m = static_cast<Eigen::Index>(modes[static_cast<size_t>(j)]);
                    const Complex du = b(x, m) * Complex(0.0, -1.0) * phase[m] * a(m, src);
                    single_g(x, j) = 2.0 * std::real(std::conj(u) * du);
                }
            }
        }
        auto next_basis = enumerate_fock_basis(dim(), static_cast<unsigned>(q + 1));
        std::map<FockState, size_t> next_index;
        for (size_t i = 0; i < next_basis.size(); i++) {
            next_index.emplace(next_basis[i], i);
        }
        std::vector<double> next_p(next_basis.size(), 0.0);
        Eigen::MatrixXd next_g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(next_basis.size()), n_par);
        for (size_t s = 0; s < cur_basis.size(); s++) {
            for (Eigen::Index x = 0; x < d; x++) {
                FockState grown = cur_basis[s];
                grown.occupations[static_cast<size_t>(x)]++;
                const size_t t = next_index.at(grown);
                next_p[t] += cur_p[s] * single_p[x];
                if (with_grads) {
                    next_g.row(static_cast<Eigen::Index>(t)) +=
                        cur_g.row(static_cast<Eigen::Index>(s)) * single_p[x] + cur_p[s] * single_g.row(x);
                }
            }
        }
        cur_basis = std::move(next_basis);
        cur_p = std::move(next_p);
        cur_g = std::move(next_g);
    }
    for (size_t i = 0; i < cur_p.size(); i++) {
        probs[i] = cur_p[i];
    }
    if (with_grads) {
        *grads = cur_g;
    }
}

void OutcomeModel::coherent_distribution(const Eigen::VectorXd &theta, const std::vector<size_t> &modes,
                                         double *probs, Eigen::MatrixXd *grads) const {
    const auto d = static_cast<Eigen::Index>(dim());
    const auto n_par = static_cast<Eigen::Index>(modes.size());
    const ComplexMatrix &a = u_in_.matrix();
    const ComplexMatrix &b = u_out_.matrix();
    const auto src = static_cast<Eigen::Index>(probe_.input_mode);
    ComplexVector phase(d);
    for (Eigen::Index k = 0; k < d; k++) {
        phase[k] = std::polar(1.0, -theta[k]);
    }
    const ComplexVector beta = probe_.alpha * (b * (phase.asDiagonal() * a.col(src)));

    // Per-mode Poisson pmf f[m][n] and d(mean_m)/d(phi_j).
    const unsigned top = truncation_;
    Eigen::MatrixXd f(d, top + 1);
    for (Eigen::Index m = 0; m < d; m++) {
        const double mu = std::norm(beta[m]);
        f(m, 0) = std::exp(-mu);
        for (unsigned n = 1; n <= top; n++) {
            f(m, n) = f(m, n - 1) * mu / n;
        }
    }
    Eigen::MatrixXd dmu = Eigen::MatrixXd::Zero(d, n_par);
    if (grads != nullptr) {
        for (Eigen::Index j = 0; j < n_par; j++) {
            const auto k = static_cast<Eigen::Index>(modes[static_cast<size_t>(j)]);
            for (Eigen::Index m = 0; m < d; m++) {
                const Complex dbeta = probe_.alpha * b(m, k) * Complex(0.0, -1.0) * phase[k] * a(k, src);
                dmu(m, j) = 2.0 * std::real(std::conj(beta[m]) * dbeta);
            }
        }
    }
    for (size_t i = 0; i < outcomes_.size(); i++) {
        const FockState &x = outcomes_[i];
        double p = 1;
        for (Eigen::Index m = 0; m < d; m++) {
            p *= f(m, x[static_cast<size_t>(m)]);
        }
        probs[i] = p;
        if (grads == nullptr) {
            continue;
        }
        for (Eigen::Index m = 0; m < d; m++) {
            // d f(n)/d mu = f(n-1) - f(n); the product of the other modes is
            // rebuilt so that a vanishing f(m) does not divide by zero.
            const unsigned n = x[static_cast<size_t>(m)];
            const double df = (n > 0 ? f(m, n - 1) : 0.0) - f(m, n);
            double rest = 1;
            for (Eigen::Index l = 0; l < d; l++) {
                if (l != m) {
                    rest *= f(l, x[static_cast<size_t>(l)]);
                }
            }
            for (Eigen::Index j = 0; j < n_par; j++) {
                (*grads)(static_cast<Eigen::Index>(i), j) += df * rest * dmu(m, j);
            }
        }
    }
}

OutcomeDistribution outcome_distribution(
    const UnitaryMatrix &u_in, const PhaseConfig &config, const UnitaryMatrix &u_out, const Probe &probe) {
    if (probe.kind == ProbeKind::Coherent) {
        throw std::invalid_argument("outcome_distribution: coherent probes go through coherent_distribution");
    }
    return OutcomeModel(u_in, u_out, probe).distribution(config);
}

OutcomeDistribution coherent_distribution(
    const UnitaryMatrix &u_in,
    const PhaseConfig &config,
    const UnitaryMatrix &u_out,
    const Probe &probe,
    double tail_tolerance) {
    if (probe.kind != ProbeKind::Coherent) {
        throw std::invalid_argument("coherent_distribution: probe is not coherent");
    }
    return OutcomeModel(u_in, u_out, probe, tail_tolerance).distribution(config);
}

}  // namespace mmzi
