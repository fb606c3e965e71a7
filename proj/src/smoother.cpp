#include "rpgssm/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rpgssm/parallel.hpp"

namespace rpgssm::smoother {

namespace {

using Index = Eigen::Index;

Eigen::LLT<Matrix> checked_cholesky(const Matrix& m, const char* what, Index t) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all() ||
        !llt.matrixLLT().allFinite()) {
        throw std::domain_error(std::string("smoother: ") + what + " is not positive definite at t=" +
                                std::to_string(t));
    }
    return llt;
}

}  // namespace

SmoothedPosterior smooth(const prior::StablePrior& prior, std::span<const gaussian::ExpFam> potentials) {
    const Index T = static_cast<Index>(potentials.size());
    const Index d = prior.latent_dim();
    if (T < 1) throw std::invalid_argument("smooth: need at least one potential");
    for (const auto& p : potentials) {
        if (p.dim() != d) {
            throw std::invalid_argument("smooth: potential dimension " + std::to_string(p.dim()) +
                                        " does not match latent dimension " + std::to_string(d));
        }
    }
    const Matrix& A = prior.A();
    const Matrix Q = prior.transition_cov();
    const Matrix I = Matrix::Identity(d, d);

    std::vector<Vector> m_pred(T), m_filt(T);
    std::vector<Matrix> P_pred(T), P_filt(T);
    double log_z = 0.0;

    for (Index t = 0; t < T; ++t) {
        if (t == 0) {
            m_pred[0] = Vector::Zero(d);
            P_pred[0] = I;
        } else {
            m_pred[t] = A * m_filt[t - 1];
            P_pred[t] = linalg::symmetrize(A * P_filt[t - 1] * A.transpose() + Q);
        }
        const gaussian::ExpFam& pot = potentials[static_cast<std::size_t>(t)];
        const auto pot_llt = checked_cholesky(pot.J(), "potential precision", t);
        const Matrix R = linalg::symmetrize(pot_llt.solve(I));
        const Vector y = pot_llt.solve(pot.h());

        const Matrix S = linalg::symmetrize(P_pred[t] + R);
        const auto S_llt = checked_cholesky(S, "innovation covariance", t);
        const Vector innov = y - m_pred[t];
        log_z += -0.5 * innov.dot(S_llt.solve(innov)) - 0.5 * linalg::logdet_from_cholesky(S_llt) -
                 0.5 * static_cast<double>(d) * kLog2Pi;

        const Matrix K = S_llt.solve(P_pred[t]).transpose();
        m_filt[t] = m_pred[t] + K * innov;
        const Matrix IK = I - K;
        P_filt[t] = linalg::symmetrize(IK * P_pred[t] * IK.transpose() + K * R * K.transpose());
        checked_cholesky(P_filt[t], "filtered covariance", t);
    }

    SmoothedPosterior out;
    out.log_normalizer = log_z;
    out.marginals.resize(static_cast<std::size_t>(T));
    out.pairwise.resize(static_cast<std::size_t>(T - 1));
    out.filtered.resize(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) out.filtered[static_cast<std::size_t>(t)] = {m_filt[t], P_filt[t]};

    out.marginals.back() = {m_filt[T - 1], P_filt[T - 1]};
    for (Index t = T - 2; t >= 0; --t) {
        const auto pred_llt = checked_cholesky(P_pred[t + 1], "predicted covariance", t + 1);
        // RTS gain G_t = P_t A^T P_pred_{t+1}^-1.
        const Matrix gain = pred_llt.solve(A * P_filt[t]).transpose();
        const auto& next = out.marginals[static_cast<std::size_t>(t + 1)];
        Vector mean = m_filt[t] + gain * (next.mean - m_pred[t + 1]);
        Matrix cov = linalg::symmetrize(P_filt[t] + gain * (next.cov - P_pred[t + 1]) * gain.transpose());
        checked_cholesky(cov, "smoothed covariance", t);
        out.pairwise[static_cast<std::size_t>(t)] = next.cov * gain.transpose();
        out.marginals[static_cast<std::size_t>(t)] = {std::move(mean), std::move(cov)};
    }
    return out;
}

std::vector<SmoothedPosterior> smooth_batch(const prior::StablePrior& prior,
                                            const std::vector<PotentialSequence>& potentials,
                                            kernels::Exec exec) {
    std::vector<SmoothedPosterior> out(potentials.size());
    parallel_for(static_cast<Index>(potentials.size()), exec, [&](Index n) {
        out[static_cast<std::size_t>(n)] = smooth(prior, potentials[static_cast<std::size_t>(n)]);
    });
    return out;
}

double chain_kl(const SmoothedPosterior& post, const prior::StablePrior& prior) {
    const Index d = prior.latent_dim();
    const Index T = post.steps();
    if (T < 1) throw std::invalid_argument("chain_kl: empty posterior");
    for (const auto& m : post.marginals) {
        if (m.dim() != d) throw std::invalid_argument("chain_kl: posterior and prior dimensions differ");
    }
    if (static_cast<Index>(post.pairwise.size()) != T - 1) {
        throw std::invalid_argument("chain_kl: pairwise moments do not match the chain length");
    }
    const Matrix& A = prior.A();
    const Matrix Q = prior.transition_cov();
    const auto Q_llt = linalg::cholesky(Q, "chain_kl: transition covariance");
    const double logdet_Q = linalg::logdet_from_cholesky(Q_llt);

    double kl = gaussian::kl_divergence(post.marginals[0], {Vector::Zero(d), Matrix::Identity(d, d)});
    for (Index t = 0; t + 1 < T; ++t) {
        const auto& cur = post.marginals[static_cast<std::size_t>(t)];
        const auto& nxt = post.marginals[static_cast<std::size_t>(t + 1)];
        const Matrix& C = post.pairwise[static_cast<std::size_t>(t)];
        const auto cur_llt = linalg::cholesky(cur.cov, "chain_kl: marginal covariance");
        // q(z_{t+1} | z_t) = N(m' + K (z_t - m), P' - K C^T),  K = C P^-1.
        const Matrix K = cur_llt.solve(C.transpose()).transpose();
        const Matrix cond_cov = linalg::symmetrize(nxt.cov - K * C.transpose());
        const auto cond_llt = linalg::cholesky(cond_cov, "chain_kl: conditional covariance");
        const Matrix KA = K - A;
        const Vector delta = nxt.mean - A * cur.mean;
        const double tr = Q_llt.solve(cond_cov + KA * cur.cov * KA.transpose()).trace();
        const double maha = delta.dot(Q_llt.solve(delta));
        kl += 0.5 * (tr + maha - static_cast<double>(d) + logdet_Q - linalg::logdet_from_cholesky(cond_llt));
    }
    return std::max(kl, 0.0);
}

double chain_entropy(const SmoothedPosterior& post) {
    const Index T = post.steps();
    if (T < 1) throw std::invalid_argument("chain_entropy: empty posterior");
    double h = gaussian::entropy(post.marginals[0]);
    for (Index t = 0; t + 1 < T; ++t) {
        const auto& cur = post.marginals[static_cast<std::size_t>(t)];
        const auto& nxt = post.marginals[static_cast<std::size_t>(t + 1)];
        const Matrix& C = post.pairwise[static_cast<std::size_t>(t)];
        const auto cur_llt = linalg::cholesky(cur.cov, "chain_entropy: marginal covariance");
        const Matrix cond_cov = linalg::symmetrize(nxt.cov - C * cur_llt.solve(C.transpose()));
        h += gaussian::entropy({nxt.mean, cond_cov});
    }
    return h;
}

SmoothedPosterior prior_as_posterior(const prior::StablePrior& prior, Eigen::Index steps) {
    if (steps < 1) throw std::invalid_argument("prior_as_posterior: need at least one step");
    const Index d = prior.latent_dim();
    SmoothedPosterior out;
    const gaussian::Moments standard{Vector::Zero(d), Matrix::Identity(d, d)};
    out.marginals.assign(static_cast<std::size_t>(steps), standard);
    out.filtered = out.marginals;
    out.pairwise.assign(static_cast<std::size_t>(steps - 1), prior.A());
    out.log_normalizer = 0.0;
    return out;
}

double free_energy_identity_check(const prior::StablePrior& prior, std::span<const gaussian::ExpFam> potentials) {
    const SmoothedPosterior post = smooth(prior, potentials);
    double expected = 0.0;
    for (std::size_t t = 0; t < potentials.size(); ++t) {
        expected += gaussian::expected_log_density(potentials[t], post.marginals[t]);
    }
    return std::abs(expected - chain_kl(post, prior) - post.log_normalizer);
}

double kalman_log_likelihood(const prior::GeneralGSSM& p, const prior::LinearEmission& e, const Matrix& x) {
    const Index d = p.A.rows();
    const Index T = x.rows();
    if (e.C.cols() != d || e.C.rows() != x.cols() || e.d.size() != x.cols()) {
        throw std::invalid_argument("kalman_log_likelihood: emission and observation shapes disagree");
    }
    const Matrix I = Matrix::Identity(d, d);
    Vector m = p.m1;
    Matrix P = p.Q1;
    double ll = 0.0;
    for (Index t = 0; t < T; ++t) {
        if (t > 0) {
            m = p.A * m + p.b;
            P = linalg::symmetrize(p.A * P * p.A.transpose() + p.Q);
        }
        const Matrix S = linalg::symmetrize(e.C * P * e.C.transpose() + e.R);
        const auto S_llt = checked_cholesky(S, "innovation covariance", t);
        const Vector innov = x.row(t).transpose() - (e.C * m + e.d);
        ll += -0.5 * innov.dot(S_llt.solve(innov)) - 0.5 * linalg::logdet_from_cholesky(S_llt) -
              0.5 * static_cast<double>(x.cols()) * kLog2Pi;
        const Matrix K = S_llt.solve(e.C * P).transpose();
        m = m + K * innov;
        const Matrix IK = I - K * e.C;
        P = linalg::symmetrize(IK * P * IK.transpose() + K * e.R * K.transpose());
    }
    return ll;
}

MarginalAdjoint marginal_adjoint(const prior::StablePrior& prior, const SmoothedPosterior& post, const Matrix& d_mean,
                                 const Matrix& d_cov) {
    const Index d = prior.latent_dim();
    const Index T = post.steps();
    if (d_mean.rows() != T || d_mean.cols() != d || d_cov.rows() != T || d_cov.cols() != d * d) {
        throw std::invalid_argument("marginal_adjoint: adjoint shapes do not match the posterior");
    }
    const Matrix& A = prior.A();
    const Matrix Q = prior.transition_cov();
    const auto at = [](Index t) { return static_cast<std::size_t>(t); };

    // RTS gains: Cov(z_s, z_t) = G_s ... G_{t-1} Sigma_t for s <= t.
    std::vector<Matrix> gain(at(std::max<Index>(T - 1, 0)));
    for (Index t = 0; t + 1 < T; ++t) {
        const Matrix& Pf = post.filtered[at(t)].cov;
        const Matrix pred = linalg::symmetrize(A * Pf * A.transpose() + Q);
        gain[at(t)] = Eigen::LLT<Matrix>(pred).solve(A * Pf).transpose();
    }
    std::vector<Matrix> E(at(T));
    for (Index t = 0; t < T; ++t) E[at(t)] = linalg::symmetrize(linalg::unflatten(d_cov.row(t), d));
    const auto cov = [&](Index t) -> const Matrix& { return post.marginals[at(t)].cov; };
    const auto mean = [&](Index t) -> const Vector& { return post.marginals[at(t)].mean; };

    // Backward sweep: r_s = sum_{t >= s} C_st g_t,  R_s = sum_{t >= s} C_st E_t C_ts.
    std::vector<Vector> r(at(T));
    std::vector<Matrix> R(at(T));
    for (Index s = T - 1; s >= 0; --s) {
        r[at(s)] = cov(s) * d_mean.row(s).transpose();
        R[at(s)] = cov(s) * E[at(s)] * cov(s);
        if (s + 1 < T) {
            r[at(s)] += gain[at(s)] * r[at(s + 1)];
            R[at(s)] += gain[at(s)] * R[at(s + 1)] * gain[at(s)].transpose();
        }
    }
    // Forward sweep over t < s: k_s, K_s with C_st = Sigma_s G_{s-1}^T ... G_t^T.
    std::vector<Vector> v(at(T));
    std::vector<Matrix> diag(at(T)), off(at(std::max<Index>(T - 1, 0)));
    Vector k = Vector::Zero(d);
    Matrix K = Matrix::Zero(d, d);
    for (Index s = 0; s < T; ++s) {
        v[at(s)] = r[at(s)] + cov(s) * k;
        diag[at(s)] = R[at(s)] + cov(s) * K * cov(s);
        if (s + 1 < T) {
            const Matrix& G = gain[at(s)];
            const Matrix W = E[at(s)] + K;
            off[at(s)] = R[at(s + 1)] * G.transpose() + cov(s + 1) * G.transpose() * W * cov(s);
            k = G.transpose() * (d_mean.row(s).transpose() + k);
            K = G.transpose() * W * G;
        }
    }

    // Adjoint of the joint precision, diagonal and (s+1, s) blocks, then of
    // its parameters: J_s on the diagonal, and A through
    // I + A^T P A, P + A^T P A, P on the diagonal and -P A below it.
    MarginalAdjoint out;
    out.dH.resize(T, d);
    out.dJ.resize(T, d * d);
    Matrix X = Matrix::Zero(d, d), Y = Matrix::Zero(d, d), Z = Matrix::Zero(d, d);
    for (Index s = 0; s < T; ++s) {
        out.dH.row(s) = v[at(s)].transpose();
        const Matrix D = -(v[at(s)] * mean(s).transpose() + diag[at(s)]);
        out.dJ.row(s) = linalg::flatten(linalg::symmetrize(D));
        if (s + 1 < T) {
            X += D;
            Z -= v[at(s + 1)] * mean(s).transpose() + mean(s + 1) * v[at(s)].transpose() + 2.0 * off[at(s)];
        }
        if (s > 0) Y += D;
    }
    out.dA = Matrix::Zero(d, d);
    if (T > 1) {
        const Matrix P = linalg::symmetrize(linalg::cholesky(Q, "marginal_adjoint: transition covariance")
                                                .solve(Matrix::Identity(d, d)));
        const Matrix PA = P * A;
        const Matrix W = P * (A * X * A.transpose() + Y - Z * A.transpose()) * P;
        out.dA = PA * X.transpose() + PA * X - P * Z + (W + W.transpose()) * A;
    }
    return out;
}

namespace {

class NaturalMarginals final : public ad::CustomOp {
public:
    NaturalMarginals(std::vector<SmoothedPosterior> posteriors, Matrix natural)
        : posteriors_(std::move(posteriors)), natural_(std::move(natural)) {}

    std::vector<Matrix> backward(const Matrix& adj, std::span<const Matrix* const> inputs,
                                 kernels::Exec exec) const override {
        const Matrix& A = *inputs[2];
        const Index d = A.rows();
        const Index N = static_cast<Index>(posteriors_.size());
        const Index T = N > 0 ? posteriors_.front().steps() : 0;
        const prior::StablePrior prior(A);
        Matrix dH(N * T, d), dJ(N * T, d * d);
        std::vector<Matrix> dA(static_cast<std::size_t>(N));
        parallel_for(N, exec, [&](Index n) {
            // Chain through h_q = J_q mean and J_q = cov^-1.
            Matrix g_mean(T, d), g_cov(T, d * d);
            for (Index t = 0; t < T; ++t) {
                const Index row = n * T + t;
                const Matrix Jq = linalg::unflatten(natural_.row(row).tail(d * d), d);
                const Vector hq = natural_.row(row).head(d).transpose();
                const Vector gh = adj.row(row).head(d).transpose();
                const Matrix gJ = linalg::unflatten(adj.row(row).tail(d * d), d);
                g_mean.row(t) = (Jq * gh).transpose();
                g_cov.row(t) = linalg::flatten(linalg::symmetrize(-Jq * gJ * Jq - Jq * gh * hq.transpose()));
            }
            MarginalAdjoint ma = marginal_adjoint(prior, posteriors_[static_cast<std::size_t>(n)], g_mean, g_cov);
            dH.middleRows(n * T, T) = ma.dH;
            dJ.middleRows(n * T, T) = ma.dJ;
            dA[static_cast<std::size_t>(n)] = std::move(ma.dA);
        });
        Matrix total = Matrix::Zero(d, d);
        for (const Matrix& g : dA) total += g;
        return {std::move(dH), std::move(dJ), std::move(total)};
    }

private:
    std::vector<SmoothedPosterior> posteriors_;
    Matrix natural_;
};

}  // namespace

ad::Var natural_marginals(const ad::Var& H, const ad::Var& Jflat, const ad::Var& A,
                          std::vector<SmoothedPosterior> posteriors) {
    const Index d = A.rows();
    const Index N = static_cast<Index>(posteriors.size());
    const Index T = N > 0 ? posteriors.front().steps() : 0;
    if (N == 0 || A.cols() != d || H.cols() != d || Jflat.cols() != d * d || H.rows() != N * T ||
        Jflat.rows() != N * T) {
        throw std::invalid_argument("natural_marginals: inputs do not match the posteriors");
    }
    const Matrix I = Matrix::Identity(d, d);
    Matrix natural(N * T, d + d * d);
    for (Index n = 0; n < N; ++n) {
        const auto& post = posteriors[static_cast<std::size_t>(n)];
        if (post.steps() != T) throw std::invalid_argument("natural_marginals: posteriors differ in length");
        for (Index t = 0; t < T; ++t) {
            const auto& m = post.marginals[static_cast<std::size_t>(t)];
            const Matrix prec = linalg::symmetrize(linalg::cholesky(m.cov, "natural_marginals").solve(I));
            natural.row(n * T + t) << (prec * m.mean).transpose(), linalg::flatten(prec);
        }
    }
    auto op = std::make_shared<NaturalMarginals>(std::move(posteriors), natural);
    const ad::Var inputs[] = {H, Jflat, A};
    return ad::custom(inputs, std::move(natural), std::move(op));
}

}  // namespace rpgssm::smoother
