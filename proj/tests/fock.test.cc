#include "mmzi/fock.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <random>

#include "gtest/gtest.h"

using namespace mmzi;

namespace {

ComplexMatrix random_unitary(size_t d, std::mt19937_64 &rng) {
    std::normal_distribution<double> g;
    ComplexMatrix m(d, d);
    for (size_t i = 0; i < d; i++) {
        for (size_t j = 0; j < d; j++) {
            m(i, j) = Complex(g(rng), g(rng));
        }
    }
    Eigen::HouseholderQR<ComplexMatrix> qr(m);
    return qr.householderQ();
}

Complex naive_permanent(const ComplexMatrix &m) {
    std::vector<int> perm(static_cast<size_t>(m.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    Complex total = 0;
    do {
        Complex term = 1;
        for (size_t i = 0; i < perm.size(); i++) {
            term *= m(static_cast<Eigen::Index>(i), perm[i]);
        }
        total += term;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return total;
}

double fact(unsigned n) {
    return std::tgamma(n + 1.0);
}

// <out| prod_k (sum_j U_jk a_j^dag)^{in_k} / sqrt(in_k!) |0>, by expanding the
// creation-operator polynomial directly.
Complex polynomial_amplitude(const ComplexMatrix &u, const FockState &in, const FockState &out) {
    const size_t d = in.modes();
    std::map<std::vector<unsigned>, Complex> poly{{std::vector<unsigned>(d, 0), 1.0}};
    for (size_t k = 0; k < d; k++) {
        for (unsigned rep = 0; rep < in[k]; rep++) {
            std::map<std::vector<unsigned>, Complex> next;
            for (const auto &[mono, c] : poly) {
                for (size_t j = 0; j < d; j++) {
                    auto m = mono;
                    m[j]++;
                    next[m] += c * u(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
                }
            }
            poly = std::move(next);
        }
    }
    double norm = 1;
    for (size_t k = 0; k < d; k++) {
        norm *= fact(out[k]) / fact(in[k]);
    }
    auto it = poly.find(out.occupations);
    return it == poly.end() ? Complex(0) : it->second * std::sqrt(norm);
}

OutcomeModel three_mode_model(const Probe &probe) {
    const auto t = multiport_unitary(3, MultiportKind::Tritter);
    return OutcomeModel(t, t, probe);
}

}  // namespace

TEST(fock, basis_size_and_order) {
    for (size_t d = 1; d <= 4; d++) {
        for (unsigned n = 0; n <= 5; n++) {
            const auto basis = enumerate_fock_basis(d, n);
            const double expected = std::round(fact(n + d - 1) / (fact(n) * fact(d - 1)));
            ASSERT_EQ(basis.size(), static_cast<size_t>(expected));
            for (const auto &s : basis) {
                ASSERT_EQ(s.total(), n);
            }
            ASSERT_EQ(std::set<FockState>(basis.begin(), basis.end()).size(), basis.size());
        }
    }
    ASSERT_THROW(enumerate_fock_basis(0, 2), std::invalid_argument);
}

TEST(fock, permanent_matches_naive) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int n = 1; n <= 5; n++) {
        for (int rep = 0; rep < 5; rep++) {
            ComplexMatrix m(n, n);
            for (int i = 0; i < n; i++) {
                for (int j = 0; j < n; j++) {
                    m(i, j) = Complex(g(rng), g(rng));
                }
            }
            ASSERT_LT(std::abs(permanent(m) - naive_permanent(m)), 1e-10 * (1 + std::abs(naive_permanent(m))));
        }
    }
    ASSERT_EQ(permanent(ComplexMatrix(0, 0)), Complex(1));
    ASSERT_NEAR(std::abs(permanent(ComplexMatrix::Ones(4, 4)) - 24.0), 0, 1e-12);
    ASSERT_THROW(permanent(ComplexMatrix(2, 3)), std::invalid_argument);
}

TEST(fock, amplitude_matches_polynomial_expansion) {
    std::mt19937_64 rng(2);
    for (size_t d : {2, 3, 4}) {
        const ComplexMatrix u = random_unitary(d, rng);
        for (unsigned n = 1; n <= 4; n++) {
            const auto basis = enumerate_fock_basis(d, n);
            for (const auto &in : basis) {
                for (const auto &out : basis) {
                    const Complex a = transition_amplitude(u, in, out);
                    ASSERT_LT(std::abs(a - polynomial_amplitude(u, in, out)), 1e-12);
                }
            }
        }
    }
}

TEST(fock, single_mode_closed_form_matches_permanent) {
    std::mt19937_64 rng(3);
    const ComplexMatrix u = random_unitary(3, rng);
    for (unsigned n = 1; n <= 6; n++) {
        const FockState in{n, 0, 0};
        for (const auto &out : enumerate_fock_basis(3, n)) {
            ComplexMatrix sub(n, n);
            unsigned r = 0;
            for (size_t k = 0; k < 3; k++) {
                for (unsigned rep = 0; rep < out[k]; rep++, r++) {
                    sub.row(r).setConstant(u(static_cast<Eigen::Index>(k), 0));
                }
            }
            double norm = fact(n);
            for (size_t k = 0; k < 3; k++) {
                norm *= fact(out[k]);
            }
            const Complex expected = naive_permanent(sub) / std::sqrt(norm);
            ASSERT_LT(std::abs(transition_amplitude(u, in, out) - expected), 1e-12);
            // And the reverse direction, all photons leaving through one mode.
            const Complex reverse = transition_amplitude(u.transpose(), out, in);
            ASSERT_LT(std::abs(reverse - expected), 1e-12);
        }
    }
}

TEST(fock, amplitude_photon_number_mismatch_is_zero) {
    const auto t = multiport_unitary(3, MultiportKind::Tritter);
    ASSERT_EQ(transition_amplitude(t.matrix(), FockState{1, 1, 0}, FockState{1, 1, 1}), Complex(0));
    ASSERT_THROW(transition_amplitude(t.matrix(), FockState{1, 1}, FockState{1, 1}), std::invalid_argument);
}

TEST(fock, sector_matrix_is_unitary) {
    std::mt19937_64 rng(4);
    for (size_t d : {3, 4}) {
        const ComplexMatrix u = random_unitary(d, rng);
        for (unsigned n = 1; n <= 4; n++) {
            const ComplexMatrix s = fock_sector_matrix(u, n);
            ASSERT_LT(unitarity_defect(s), 1e-11);
        }
    }
}

TEST(fock, hong_ou_mandel_dip) {
    ComplexMatrix bs(2, 2);
    bs << 1, 1, 1, -1;
    bs /= std::sqrt(2.0);
    const FockState in{1, 1};
    ASSERT_NEAR(std::abs(transition_amplitude(bs, in, FockState{1, 1})), 0, 1e-15);
    ASSERT_NEAR(std::norm(transition_amplitude(bs, in, FockState{2, 0})), 0.5, 1e-15);
    ASSERT_NEAR(std::norm(transition_amplitude(bs, in, FockState{0, 2})), 0.5, 1e-15);
}

TEST(fock, tritter_bunching_probability) {
    // One photon per tritter input: perm of the full matrix gives the all-in-one-mode rate.
    const auto t = multiport_unitary(3, MultiportKind::Tritter);
    const FockState in{1, 1, 1};
    ASSERT_NEAR(std::norm(transition_amplitude(t.matrix(), in, FockState{3, 0, 0})), 2.0 / 9.0, 1e-14);
    ASSERT_NEAR(std::norm(transition_amplitude(t.matrix(), in, FockState{1, 1, 1})), 1.0 / 3.0, 1e-14);
    ASSERT_NEAR(std::norm(transition_amplitude(t.matrix(), in, FockState{2, 1, 0})), 0, 1e-14);
}

TEST(fock, fock_distribution_matches_full_unitary) {
    const auto setups = {MmziSetup::three_mode(), MmziSetup::four_mode(0.3)};
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ph(0, kTwoPi);
    for (const auto &setup : setups) {
        const Probe probe = Probe::single_photons(setup.dim());
        const OutcomeModel model(setup.splitter, setup.splitter, probe);
        for (int rep = 0; rep < 5; rep++) {
            const auto cfg = setup.config({ph(rng), ph(rng)}, {ph(rng), ph(rng)});
            const auto dist = model.distribution(cfg);
            const auto u = compose_interferometer(setup.splitter, cfg, setup.splitter);
            double total = 0;
            for (size_t i = 0; i < dist.size(); i++) {
                const double p = std::norm(transition_amplitude(u.matrix(), probe.occupations, dist.outcomes[i]));
                ASSERT_NEAR(dist.probs[i], p, 1e-13);
                total += dist.probs[i];
            }
            ASSERT_NEAR(total, 1, 1e-12);
            std::vector<double> fast;
            model.probabilities(cfg, fast);
            for (size_t i = 0; i < dist.size(); i++) {
                ASSERT_NEAR(fast[i], dist.probs[i], 1e-15);
            }
        }
    }
}

TEST(fock, gradients_match_finite_differences) {
    const auto three = MmziSetup::three_mode();
    const auto four = MmziSetup::four_mode(0.01);
    const std::vector<std::pair<MmziSetup, Probe>> cases{
        {three, Probe::single_photons(3)},
        {three, Probe::distinguishable(FockState{1, 1, 1})},
        {three, Probe::coherent(std::sqrt(3.0), 0)},
        {three, Probe::fock(FockState{2, 0, 1})},
        {four, Probe::single_photons(4)},
    };
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ph(0, kTwoPi);
    const double h = 1e-5;
    for (const auto &[setup, probe] : cases) {
        const OutcomeModel model(setup.splitter, setup.splitter, probe);
        for (int rep = 0; rep < 20; rep++) {
            const std::vector<double> phis{ph(rng), ph(rng)};
            const std::vector<double> psi{ph(rng), ph(rng)};
            const auto dist = model.distribution(setup.config(phis, psi));
            double grad_sum[2] = {0, 0};
            for (size_t j = 0; j < 2; j++) {
                auto up = phis;
                auto down = phis;
                up[j] += h;
                down[j] -= h;
                std::vector<double> pu;
                std::vector<double> pd;
                model.probabilities(setup.config(up, psi), pu);
                model.probabilities(setup.config(down, psi), pd);
                for (size_t i = 0; i < dist.size(); i++) {
                    const double fd = (pu[i] - pd[i]) / (2 * h);
                    const double g = dist.grads(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    ASSERT_NEAR(g, fd, 1e-6 * std::max(1.0, std::abs(fd)));
                    grad_sum[j] += g;
                }
            }
            const double tol = probe.kind == ProbeKind::Coherent ? 1e-9 : 1e-12;
            ASSERT_NEAR(grad_sum[0], 0, tol);
            ASSERT_NEAR(grad_sum[1], 0, tol);
        }
    }
}

TEST(fock, distinguishable_matches_path_enumeration) {
    const auto setup = MmziSetup::three_mode();
    const FockState occ{2, 0, 1};
    const OutcomeModel model(setup.splitter, setup.splitter, Probe::distinguishable(occ));
    const auto cfg = setup.config({0.9, 2.3}, {0.1, 0.4});
    const auto u = compose_interferometer(setup.splitter, cfg, setup.splitter);
    const auto dist = model.distribution(cfg);

    // Every photon picks an output mode independently; count the mode tallies.
    const std::vector<size_t> sources{0, 0, 2};
    std::map<FockState, double> oracle;
    for (size_t a = 0; a < 3; a++) {
        for (size_t b = 0; b < 3; b++) {
            for (size_t c = 0; c < 3; c++) {
                const size_t dest[3] = {a, b, c};
                double p = 1;
                FockState tally{0, 0, 0};
                for (size_t k = 0; k < 3; k++) {
                    p *= std::norm(u(dest[k], sources[k]));
                    tally.occupations[dest[k]]++;
                }
                oracle[tally] += p;
            }
        }
    }
    ASSERT_EQ(dist.size(), oracle.size());
    for (size_t i = 0; i < dist.size(); i++) {
        ASSERT_NEAR(dist.probs[i], oracle.at(dist.outcomes[i]), 1e-14);
    }
}

TEST(fock, coherent_distribution_is_poisson_product) {
    const auto setup = MmziSetup::three_mode();
    const Probe probe = Probe::coherent(std::sqrt(3.0), 0);
    const auto cfg = setup.config({1.1, 0.2}, {0.3, 0.0});
    const auto dist = coherent_distribution(setup.splitter, cfg, setup.splitter, probe);
    const auto u = compose_interferometer(setup.splitter, cfg, setup.splitter);
    double total = 0;
    for (size_t i = 0; i < dist.size(); i++) {
        double p = 1;
        for (size_t m = 0; m < 3; m++) {
            const double mu = 3.0 * std::norm(u(m, 0));
            const unsigned n = dist.outcomes[i][m];
            p *= std::exp(-mu + n * std::log(mu) - std::lgamma(n + 1.0));
        }
        ASSERT_NEAR(dist.probs[i], p, 1e-14);
        total += dist.probs[i];
    }
    ASSERT_NEAR(total, 1, 1e-10);
    ASSERT_THROW(outcome_distribution(setup.splitter, cfg, setup.splitter, probe), std::invalid_argument);
}

TEST(fock, poisson_truncation_tail) {
    for (double mean : {0.5, 3.0, 4.0, 10.0}) {
        for (double tol : {1e-8, 1e-11}) {
            const unsigned n = poisson_truncation(mean, tol);
            auto tail_after = [&](unsigned top) {
                double t = 0;
                for (unsigned k = top + 1; k < top + 400; k++) {
                    t += std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0));
                }
                return t;
            };
            ASSERT_LT(tail_after(n), tol);
            ASSERT_GE(tail_after(n - 1), tol);
        }
    }
}

TEST(fock, probe_validation) {
    ASSERT_THROW(Probe::coherent(0.0, 0).validate(3), std::invalid_argument);
    ASSERT_THROW(Probe::coherent(1.0, 3).validate(3), std::invalid_argument);
    ASSERT_THROW(Probe::fock(FockState{1, 1}).validate(3), std::invalid_argument);
    ASSERT_THROW(Probe::fock(FockState{0, 0, 0}).validate(3), std::invalid_argument);
    ASSERT_NO_THROW(Probe::single_photons(4).validate(4));
    ASSERT_EQ(Probe::coherent(2.0, 1).mean_photons(), 4.0);
}

TEST(fock, outcome_index_lookup) {
    const auto model = three_mode_model(Probe::single_photons(3));
    ASSERT_EQ(model.num_outcomes(), 10u);
    for (size_t i = 0; i < model.num_outcomes(); i++) {
        ASSERT_EQ(model.index_of(model.outcomes()[i]), static_cast<long>(i));
    }
    ASSERT_EQ(model.index_of(FockState{4, 0, 0}), -1);
}
