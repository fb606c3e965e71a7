#pragma once

#include <span>
#include <vector>

#include "rpgssm/autodiff.hpp"
#include "rpgssm/gaussian.hpp"
#include "rpgssm/kernels.hpp"
#include "rpgssm/prior.hpp"

namespace rpgssm::smoother {

using PotentialSequence = std::vector<gaussian::ExpFam>;

struct SmoothedPosterior {
    std::vector<gaussian::Moments> marginals;  // q(z_t), t = 0..T-1
    std::vector<Matrix> pairwise;              // Cov_q(z_{t+1}, z_t), t = 0..T-2
    std::vector<gaussian::Moments> filtered;   // q(z_t | potentials up to t)
    double log_normalizer = 0.0;               // log int p(z) prod_t f_t(z_t) dz

    Eigen::Index steps() const { return static_cast<Eigen::Index>(marginals.size()); }
};

/// Exact posterior of the stable chain with each potential treated as an
/// identity-emission pseudo-observation (mean J^-1 h, covariance J^-1).
/// Covariance-form Kalman filter with Joseph updates, then RTS smoothing.
/// Throws std::domain_error naming the time index if an intermediate
/// covariance loses positive definiteness.
SmoothedPosterior smooth(const prior::StablePrior& prior, std::span<const gaussian::ExpFam> potentials);

/// Smooths every sequence; sequences are independent, so the parallel and
/// serial paths give bit-identical results.
std::vector<SmoothedPosterior> smooth_batch(const prior::StablePrior& prior,
                                            const std::vector<PotentialSequence>& potentials,
                                            kernels::Exec exec = kernels::Exec::parallel);

/// KL(q || p) over the whole chain, via
///   KL(q(z_1) || N(0, I)) + sum_t E_q[ KL(q(z_{t+1} | z_t) || N(A z_t, I - A A^T)) ].
double chain_kl(const SmoothedPosterior& posterior, const prior::StablePrior& prior);

/// Entropy of the chain posterior, H(q(z_1)) + sum_t H(q(z_{t+1} | z_t)).
double chain_entropy(const SmoothedPosterior& posterior);

/// The prior chain itself, packaged as a posterior (log_normalizer 0).
SmoothedPosterior prior_as_posterior(const prior::StablePrior& prior, Eigen::Index steps);

/// |sum_t E_q[log f_t] - KL(q || p) - log_normalizer| at the exact posterior.
double free_energy_identity_check(const prior::StablePrior& prior, std::span<const gaussian::ExpFam> potentials);

/// Marginal log-likelihood of T x D_X observations under a general GSSM with
/// linear-Gaussian emissions (standard Kalman filter).
double kalman_log_likelihood(const prior::GeneralGSSM& params, const prior::LinearEmission& emission,
                             const Matrix& observations);

/// Reverse-mode adjoint of (potentials, A) -> smoothed marginal moments.
/// Given dL/dmean_t (rows of d_mean, T x D) and symmetric dL/dcov_t (rows of
/// d_cov, flattened), returns dL/dh_t, dL/dJ_t (symmetrized) and dL/dA.
/// Uses only the RTS gains of `posterior`, which must be the exact posterior
/// of the potentials under `prior`; cost is O(T D^3).
struct MarginalAdjoint {
    Matrix dH;
    Matrix dJ;
    Matrix dA;
};
MarginalAdjoint marginal_adjoint(const prior::StablePrior& prior, const SmoothedPosterior& posterior,
                                 const Matrix& d_mean, const Matrix& d_cov);

/// Natural parameters of the smoothed marginals as a tape node:
/// (N T) x (D + D^2) rows [J_q mean | flatten(J_q)] with J_q = cov^-1, for
/// potential rows H (N T x D), Jflat (N T x D^2) and transition A.
/// `posteriors` must be the smoothed posteriors of exactly these inputs.
ad::Var natural_marginals(const ad::Var& H, const ad::Var& Jflat, const ad::Var& A,
                          std::vector<SmoothedPosterior> posteriors);

}  // namespace rpgssm::smoother
