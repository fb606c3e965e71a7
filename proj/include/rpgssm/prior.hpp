#pragma once

#include <cstdint>

#include "rpgssm/linalg.hpp"

namespace rpgssm::prior {

/// Stationary linear-Gaussian latent chain:
///   z_1 ~ N(0, I),  z_t | z_{t-1} ~ N(A z_{t-1}, I - A A^T).
/// Every marginal is N(0, I) as long as ||A||_2 < 1.
class StablePrior {
public:
    /// Throws std::domain_error unless ||A||_2 < 1 and I - A A^T is PD.
    explicit StablePrior(Matrix A);

    const Matrix& A() const { return A_; }
    Eigen::Index latent_dim() const { return A_.rows(); }
    Matrix transition_cov() const;

private:
    Matrix A_;
};

/// General time-invariant GSSM prior (m1, Q1, A, b, Q).
struct GeneralGSSM {
    Vector m1;
    Matrix Q1;
    Matrix A;
    Vector b;
    Matrix Q;
};

/// Linear-Gaussian emission x_t ~ N(C z_t + d, R).
struct LinearEmission {
    Matrix C;
    Vector d;
    Matrix R;
};

/// Solves Q_inf = A Q_inf A^T + Q by the vectorized linear system
/// (I - A kron A) vec(Q_inf) = vec(Q). Throws std::domain_error if rho(A) >= 1.
Matrix solve_lyapunov(const Matrix& A, const Matrix& Q);

/// m_inf = (I - A)^-1 b.
Vector stationary_mean(const Matrix& A, const Vector& b);

struct Canonicalization {
    Matrix G;
    Vector c;
    GeneralGSSM params;
};

/// Affine change of latent variables u = G z + c with zero bias and identity
/// stationary covariance. G = S^-1/2 U^T from Q_inf = U S U^T (eigenvalues
/// sorted descending), c = (G A G^-1 - I)^-1 G b.
Canonicalization canonicalize(const GeneralGSSM& params);

/// Emission composed with h: u -> G^-1 (u - c).
LinearEmission transform_emission(const LinearEmission& emission, const Canonicalization& canon);

/// Clips singular values above 1 - eps down to 1 - eps. Zero singular values
/// stay zero. Returns A bit-for-bit when it is already feasible.
Matrix clip_singular_values(const Matrix& A, double eps);

/// T x D trajectory, deterministic per seed.
Matrix sample_chain(const StablePrior& prior, Eigen::Index steps, std::uint64_t seed);

/// The chain as a general GSSM (m1 = 0, Q1 = I, b = 0, Q = I - A A^T).
GeneralGSSM as_general(const StablePrior& prior);

}  // namespace rpgssm::prior
