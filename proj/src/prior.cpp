#include "rpgssm/prior.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rpgssm/random.hpp"

namespace rpgssm::prior {

StablePrior::StablePrior(Matrix A) : A_(std::move(A)) {
    if (A_.rows() != A_.cols() || A_.rows() == 0) {
        throw std::invalid_argument("StablePrior: transition matrix must be square and non-empty");
    }
    if (!A_.allFinite()) throw std::domain_error("StablePrior: transition matrix has non-finite entries");
    const double norm = linalg::spectral_norm(A_);
    if (!(norm < 1.0)) {
        throw std::domain_error("StablePrior: largest singular value of A is " + std::to_string(norm) +
                                ", must be < 1");
    }
    if (!linalg::is_positive_definite(transition_cov())) {
        throw std::domain_error("StablePrior: I - A A^T is not positive definite");
    }
}

Matrix StablePrior::transition_cov() const {
    const Eigen::Index d = latent_dim();
    return linalg::symmetrize(Matrix::Identity(d, d) - A_ * A_.transpose());
}

Matrix solve_lyapunov(const Matrix& A, const Matrix& Q) {
    const Eigen::Index d = A.rows();
    if (A.cols() != d || Q.rows() != d || Q.cols() != d) {
        throw std::invalid_argument("solve_lyapunov: A and Q must be square of equal size");
    }
    const double rho = linalg::spectral_radius(A);
    if (!(rho < 1.0)) {
        throw std::domain_error("solve_lyapunov: spectral radius " + std::to_string(rho) +
                                " >= 1, no stationary solution");
    }
    // vec(A X A^T) = (A kron A) vec(X) for column-major vec.
    const Eigen::Index n = d * d;
    Matrix system = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            system.block(i * d, j * d, d, d) -= A(i, j) * A;
    const Vector rhs = Eigen::Map<const Vector>(Q.data(), n);
    const Vector x = system.partialPivLu().solve(rhs);
    return linalg::symmetrize(Eigen::Map<const Matrix>(x.data(), d, d));
}

Vector stationary_mean(const Matrix& A, const Vector& b) {
    const Eigen::Index d = A.rows();
    if (b.size() != d) throw std::invalid_argument("stationary_mean: bias has wrong length");
    const double rho = linalg::spectral_radius(A);
    if (!(rho < 1.0)) throw std::domain_error("stationary_mean: spectral radius >= 1");
    return (Matrix::Identity(d, d) - A).partialPivLu().solve(b);
}

Canonicalization canonicalize(const GeneralGSSM& p) {
    const Eigen::Index d = p.A.rows();
    if (!(linalg::spectral_radius(p.A) < 1.0)) {
        throw std::domain_error("canonicalize: system is not stable");
    }
    const Matrix q_inf = solve_lyapunov(p.A, p.Q);
    Eigen::SelfAdjointEigenSolver<Matrix> es(q_inf);
    if (es.info() != Eigen::Success || !(es.eigenvalues().array() > 0.0).all()) {
        throw std::domain_error("canonicalize: stationary covariance is not positive definite");
    }
    // Eigen sorts ascending; flip to descending.
    const Vector s = es.eigenvalues().reverse();
    const Matrix U = es.eigenvectors().rowwise().reverse();
    const Matrix G = s.array().rsqrt().matrix().asDiagonal() * U.transpose();
    const Matrix G_inv = U * s.array().sqrt().matrix().asDiagonal();

    const Matrix A_t = G * p.A * G_inv;
    const Matrix I = Matrix::Identity(d, d);
    const Eigen::FullPivLU<Matrix> lu(A_t - I);
    if (!lu.isInvertible()) {
        throw std::logic_error("canonicalize: G A G^-1 - I is singular although the system is stable");
    }
    const Vector c = lu.solve(G * p.b);

    Canonicalization out;
    out.G = G;
    out.c = c;
    out.params.m1 = G * p.m1 + c;
    out.params.Q1 = linalg::symmetrize(G * p.Q1 * G.transpose());
    out.params.A = A_t;
    out.params.b = (I - A_t) * c + G * p.b;
    out.params.Q = linalg::symmetrize(G * p.Q * G.transpose());
    return out;
}

LinearEmission transform_emission(const LinearEmission& e, const Canonicalization& canon) {
    const Matrix G_inv = canon.G.inverse();
    return {e.C * G_inv, e.d - e.C * G_inv * canon.c, e.R};
}

Matrix clip_singular_values(const Matrix& A, double eps) {
    if (A.size() == 0) return A;
    const double ceiling = 1.0 - eps;
    Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    if (s.maxCoeff() <= ceiling) return A;
    const Vector clipped = s.cwiseMin(ceiling);
    return svd.matrixU() * clipped.asDiagonal() * svd.matrixV().transpose();
}

Matrix sample_chain(const StablePrior& prior, Eigen::Index steps, std::uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("sample_chain: need at least one step");
    const Eigen::Index d = prior.latent_dim();
    const auto llt = linalg::cholesky(prior.transition_cov(), "sample_chain: transition covariance");
    const Matrix L = llt.matrixL();
    random::Engine rng(seed);
    Matrix z(steps, d);
    z.row(0) = random::standard_normal(rng, 1, d);
    for (Eigen::Index t = 1; t < steps; ++t) {
        const Vector eps = random::standard_normal(rng, d, 1);
        z.row(t) = (prior.A() * z.row(t - 1).transpose() + L * eps).transpose();
    }
    return z;
}

GeneralGSSM as_general(const StablePrior& prior) {
    const Eigen::Index d = prior.latent_dim();
    return {Vector::Zero(d), Matrix::Identity(d, d), prior.A(), Vector::Zero(d), prior.transition_cov()};
}

}  // namespace rpgssm::prior
