#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rpgssm/smoother.hpp"
#include "support/dense_oracle.hpp"
#include "support/generators.hpp"

using namespace rpgssm;
using gaussian::ExpFam;
using doctest::Approx;

namespace {

double min_eig(const Matrix& m) { return Eigen::SelfAdjointEigenSolver<Matrix>(linalg::symmetrize(m)).eigenvalues().minCoeff(); }

}  // namespace

TEST_CASE("single step: prior N(0,1) and potential N(1,1)") {
    const prior::StablePrior p(Matrix::Zero(1, 1));
    const std::vector<ExpFam> pots{ExpFam(Vector::Constant(1, 1.0), Matrix::Identity(1, 1))};
    const auto post = smoother::smooth(p, pots);
    REQUIRE(post.steps() == 1);
    CHECK(post.marginals[0].mean(0) == Approx(0.5).epsilon(1e-14));
    CHECK(post.marginals[0].cov(0, 0) == Approx(0.5).epsilon(1e-14));
    CHECK(post.log_normalizer == Approx(-1.5155121234846434).epsilon(1e-12));
    CHECK(post.pairwise.empty());
    CHECK(smoother::free_energy_identity_check(p, pots) <= 1e-10);
}

TEST_CASE("memoryless chain factorizes over time") {
    testing::Gen gen(51);
    const prior::StablePrior p(Matrix::Zero(2, 2));
    const auto pots = gen.potentials(4, 2);
    const auto post = smoother::smooth(p, pots);
    double sum = 0.0;
    for (std::size_t t = 0; t < pots.size(); ++t) {
        const auto single = smoother::smooth(p, std::span<const ExpFam>(&pots[t], 1));
        CHECK((post.marginals[t].mean - single.marginals[0].mean).norm() <= 1e-12);
        sum += single.log_normalizer;
    }
    for (const auto& c : post.pairwise) CHECK(c.norm() <= 1e-12);
    CHECK(post.log_normalizer == Approx(sum).epsilon(1e-12));

    // Permuting potentials across time leaves the normalizer unchanged.
    std::vector<ExpFam> permuted(pots.rbegin(), pots.rend());
    CHECK(smoother::smooth(p, permuted).log_normalizer == Approx(post.log_normalizer).epsilon(1e-12));

    const auto three = gen.potentials(3, 2);
    CHECK(smoother::free_energy_identity_check(p, three) <= 1e-8);
}

TEST_CASE("smoother matches the dense joint-Gaussian oracle") {
    testing::Gen gen(52);
    for (int rep = 0; rep < 40; ++rep) {
        const auto d = gen.integer(1, 3);
        const auto T = gen.integer(1, 5);
        const auto p = gen.stable_prior(d);
        const auto pots = gen.potentials(T, d);
        const auto post = smoother::smooth(p, pots);
        const auto dense = testing::dense_chain(p, pots);
        for (Eigen::Index t = 0; t < T; ++t) {
            const auto& m = post.marginals[static_cast<std::size_t>(t)];
            CHECK((m.mean - dense.mean_at(t)).cwiseAbs().maxCoeff() <= 1e-8);
            CHECK((m.cov - dense.cov_block(t, t)).cwiseAbs().maxCoeff() <= 1e-8);
            if (t + 1 < T) {
                CHECK((post.pairwise[static_cast<std::size_t>(t)] - dense.cov_block(t + 1, t)).cwiseAbs().maxCoeff() <= 1e-8);
            }
        }
        CHECK(std::abs(post.log_normalizer - dense.log_normalizer) <= 1e-8);
        const double kl = testing::dense_kl(dense.mean, dense.cov, Vector::Zero(d * T), dense.prior_cov);
        CHECK(std::abs(smoother::chain_kl(post, p) - kl) <= 1e-8);
        CHECK(smoother::free_energy_identity_check(p, pots) <= 1e-8);
    }
}

TEST_CASE("posterior invariants") {
    testing::Gen gen(53);
    for (int rep = 0; rep < 20; ++rep) {
        const auto d = gen.integer(1, 4);
        const auto T = gen.integer(2, 12);
        const auto p = gen.stable_prior(d);
        const auto post = smoother::smooth(p, gen.potentials(T, d));
        for (Eigen::Index t = 0; t < T; ++t) {
            const auto i = static_cast<std::size_t>(t);
            CHECK(linalg::is_positive_definite(post.marginals[i].cov));
            // Smoothing never increases uncertainty.
            CHECK(min_eig(post.filtered[i].cov - post.marginals[i].cov) >= -1e-10);
            if (t + 1 < T) {
                Matrix joint(2 * d, 2 * d);
                joint << post.marginals[i + 1].cov, post.pairwise[i], post.pairwise[i].transpose(), post.marginals[i].cov;
                CHECK(min_eig(joint) >= -1e-10);
            }
        }
    }
}

TEST_CASE("chain KL") {
    testing::Gen gen(54);
    const auto p = gen.stable_prior(3);
    CHECK(std::abs(smoother::chain_kl(smoother::prior_as_posterior(p, 6), p)) <= 1e-12);

    // Orthogonal relabeling applied to both posterior and prior.
    const auto pots = gen.potentials(5, 3);
    const auto post = smoother::smooth(p, pots);
    const Matrix U = gen.orthogonal(3);
    const prior::StablePrior rotated(U * p.A() * U.transpose());
    auto moved = post;
    for (auto& m : moved.marginals) {
        m.mean = U * m.mean;
        m.cov = U * m.cov * U.transpose();
    }
    for (auto& c : moved.pairwise) c = U * c * U.transpose();
    CHECK(smoother::chain_kl(moved, rotated) == Approx(smoother::chain_kl(post, p)).epsilon(1e-10));
    CHECK(smoother::chain_kl(post, p) > 0.0);

    const prior::StablePrior other(Matrix::Zero(2, 2));
    CHECK_THROWS(smoother::chain_kl(post, other));
}

TEST_CASE("smoother errors") {
    const prior::StablePrior p(Matrix::Zero(2, 2));
    std::vector<ExpFam> wrong{ExpFam::standard(3)};
    CHECK_THROWS(smoother::smooth(p, wrong));
    CHECK_THROWS(smoother::smooth(p, std::vector<ExpFam>{}));
}

TEST_CASE("batch smoothing: serial and parallel are bit-identical") {
    testing::Gen gen(55);
    const auto p = gen.stable_prior(3);
    std::vector<smoother::PotentialSequence> pots;
    for (int n = 0; n < 9; ++n) pots.push_back(gen.potentials(7, 3));
    const auto s = smoother::smooth_batch(p, pots, kernels::Exec::serial);
    const auto q = smoother::smooth_batch(p, pots, kernels::Exec::parallel);
    for (std::size_t n = 0; n < s.size(); ++n) {
        CHECK(s[n].log_normalizer == q[n].log_normalizer);
        for (std::size_t t = 0; t < s[n].marginals.size(); ++t) {
            CHECK(s[n].marginals[t].mean == q[n].marginals[t].mean);
            CHECK(s[n].marginals[t].cov == q[n].marginals[t].cov);
        }
    }
}

TEST_CASE("kalman log-likelihood against the dense marginal") {
    testing::Gen gen(56);
    for (int rep = 0; rep < 10; ++rep) {
        const auto d = gen.integer(1, 3), dx = gen.integer(1, 3), T = gen.integer(1, 6);
        const auto g = gen.general_gssm(d);
        const auto em = gen.emission(d, dx);
        const Matrix obs = gen.normal(T, dx);
        // Dense joint of the latent chain.
        Vector mz(d * T);
        Matrix Sz = Matrix::Zero(d * T, d * T);
        mz.head(d) = g.m1;
        Sz.topLeftCorner(d, d) = g.Q1;
        for (Eigen::Index t = 1; t < T; ++t) {
            mz.segment(t * d, d) = g.A * mz.segment((t - 1) * d, d) + g.b;
            for (Eigen::Index s = 0; s < t; ++s) {
                Sz.block(t * d, s * d, d, d) = g.A * Sz.block((t - 1) * d, s * d, d, d);
                Sz.block(s * d, t * d, d, d) = Sz.block(t * d, s * d, d, d).transpose();
            }
            Sz.block(t * d, t * d, d, d) = g.A * Sz.block((t - 1) * d, (t - 1) * d, d, d) * g.A.transpose() + g.Q;
        }
        Matrix C = Matrix::Zero(dx * T, d * T), R = Matrix::Zero(dx * T, dx * T);
        Vector off(dx * T), x(dx * T);
        for (Eigen::Index t = 0; t < T; ++t) {
            C.block(t * dx, t * d, dx, d) = em.C;
            R.block(t * dx, t * dx, dx, dx) = em.R;
            off.segment(t * dx, dx) = em.d;
            x.segment(t * dx, dx) = obs.row(t).transpose();
        }
        const Matrix S = C * Sz * C.transpose() + R;
        const Vector r = x - C * mz - off;
        const Eigen::LLT<Matrix> llt(S);
        const double ll = -0.5 * r.dot(llt.solve(r)) - llt.matrixLLT().diagonal().array().log().sum() -
                          0.5 * static_cast<double>(dx * T) * kLog2Pi;
        CHECK(smoother::kalman_log_likelihood(g, em, obs) == Approx(ll).epsilon(1e-10));
    }
}

namespace {

// L = sum_t <a_t, mean_t> + <B_t, cov_t> for fixed random a, B.
double linear_functional(const prior::StablePrior& prior, const std::vector<ExpFam>& pots, const Matrix& a,
                         const Matrix& B) {
    const auto post = smoother::smooth(prior, pots);
    double total = 0.0;
    for (Eigen::Index t = 0; t < post.steps(); ++t) {
        const auto& m = post.marginals[static_cast<std::size_t>(t)];
        total += a.row(t).dot(m.mean.transpose()) + B.row(t).dot(linalg::flatten(m.cov));
    }
    return total;
}

}  // namespace

TEST_CASE("marginal adjoint matches central differences") {
    testing::Gen gen(91);
    const double step = 1e-6;
    for (int rep = 0; rep < 12; ++rep) {
        const auto d = gen.integer(1, 3);
        const auto T = gen.integer(1, 6);
        Matrix A = gen.with_norm(d, gen.uniform(0.0, 0.9));
        std::vector<ExpFam> pots = gen.potentials(T, d);
        const Matrix a = gen.normal(T, d);
        Matrix B(T, d * d);
        for (Eigen::Index t = 0; t < T; ++t) {
            const Matrix b = gen.normal(d, d);
            B.row(t) = linalg::flatten(linalg::symmetrize(b));
        }
        const auto post = smoother::smooth(prior::StablePrior(A), pots);
        const auto adj = smoother::marginal_adjoint(prior::StablePrior(A), post, a, B);
        auto value = [&] { return linear_functional(prior::StablePrior(A), pots, a, B); };

        double worst = 0.0;
        auto compare = [&](double analytic, double fd) {
            worst = std::max(worst, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
        };
        for (Eigen::Index t = 0; t < T; ++t) {
            for (Eigen::Index i = 0; i < d; ++i) {
                const Vector h0 = pots[static_cast<std::size_t>(t)].h();
                const Matrix J0 = pots[static_cast<std::size_t>(t)].J();
                Vector h = h0;
                h(i) += step;
                pots[static_cast<std::size_t>(t)] = ExpFam(h, J0);
                const double up = value();
                h(i) -= 2.0 * step;
                pots[static_cast<std::size_t>(t)] = ExpFam(h, J0);
                const double down = value();
                pots[static_cast<std::size_t>(t)] = ExpFam(h0, J0);
                compare(adj.dH(t, i), (up - down) / (2.0 * step));

                for (Eigen::Index j = 0; j <= i; ++j) {
                    // Symmetric perturbation of entries (i, j) and (j, i).
                    Matrix E = Matrix::Zero(d, d);
                    E(i, j) = E(j, i) = step;
                    pots[static_cast<std::size_t>(t)] = ExpFam(h0, J0 + E);
                    const double jup = value();
                    pots[static_cast<std::size_t>(t)] = ExpFam(h0, J0 - E);
                    const double jdown = value();
                    pots[static_cast<std::size_t>(t)] = ExpFam(h0, J0);
                    const Matrix g = linalg::unflatten(adj.dJ.row(t), d);
                    const double analytic = i == j ? g(i, i) : g(i, j) + g(j, i);
                    compare(analytic, (jup - jdown) / (2.0 * step));
                }
            }
        }
        for (Eigen::Index i = 0; i < d * d; ++i) {
            const double keep = A(i);
            A(i) = keep + step;
            const double up = value();
            A(i) = keep - step;
            const double down = value();
            A(i) = keep;
            compare(adj.dA(i), (up - down) / (2.0 * step));
        }
        CHECK(worst <= 1e-6);
    }
}
