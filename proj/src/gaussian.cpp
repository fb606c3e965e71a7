#include "rpgssm/gaussian.hpp"

#include <stdexcept>
#include <string>

namespace rpgssm::gaussian {

namespace {

constexpr double kMaxAsymmetry = 1e-8;

void check_same_dim(Eigen::Index a, Eigen::Index b, const char* op) {
    if (a != b) {
        throw std::invalid_argument(std::string(op) + ": dimension mismatch (" + std::to_string(a) +
                                    " vs " + std::to_string(b) + ")");
    }
}

}  // namespace

ExpFam::ExpFam(Vector h, Matrix J) : h_(std::move(h)), J_(std::move(J)) {
    if (J_.rows() != J_.cols() || J_.rows() != h_.size()) {
        throw std::invalid_argument("ExpFam: h has length " + std::to_string(h_.size()) + " but J is " +
                                    std::to_string(J_.rows()) + "x" + std::to_string(J_.cols()));
    }
    if (linalg::asymmetry(J_) > kMaxAsymmetry) {
        throw std::invalid_argument("ExpFam: precision matrix J is not symmetric");
    }
    J_ = linalg::symmetrize(J_);
}

ExpFam ExpFam::standard(Eigen::Index dim) {
    return ExpFam(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

ExpFam ExpFam::operator+(const ExpFam& other) const {
    check_same_dim(dim(), other.dim(), "ExpFam::operator+");
    return ExpFam(h_ + other.h_, J_ + other.J_);
}

ExpFam ExpFam::operator-(const ExpFam& other) const {
    check_same_dim(dim(), other.dim(), "ExpFam::operator-");
    return ExpFam(h_ - other.h_, J_ - other.J_);
}

double log_normalizer(const ExpFam& g) {
    const auto llt = linalg::cholesky(g.J(), "log_normalizer: precision J");
    const Vector Jinv_h = llt.solve(g.h());
    return 0.5 * g.h().dot(Jinv_h) - 0.5 * linalg::logdet_from_cholesky(llt) +
           0.5 * static_cast<double>(g.dim()) * kLog2Pi;
}

Moments to_moments(const ExpFam& g) {
    const auto llt = linalg::cholesky(g.J(), "to_moments: precision J");
    const Eigen::Index d = g.dim();
    Matrix cov = linalg::symmetrize(llt.solve(Matrix::Identity(d, d)));
    return {llt.solve(g.h()), std::move(cov)};
}

ExpFam to_natural(const Moments& m) {
    check_same_dim(m.mean.size(), m.cov.rows(), "to_natural");
    const auto llt = linalg::cholesky(m.cov, "to_natural: covariance");
    const Eigen::Index d = m.dim();
    Matrix J = linalg::symmetrize(llt.solve(Matrix::Identity(d, d)));
    return ExpFam(llt.solve(m.mean), std::move(J));
}

double entropy(const Moments& m) {
    const auto llt = linalg::cholesky(m.cov, "entropy: covariance");
    return 0.5 * static_cast<double>(m.dim()) * (1.0 + kLog2Pi) + 0.5 * linalg::logdet_from_cholesky(llt);
}

double kl_divergence(const Moments& q, const Moments& p) {
    check_same_dim(q.dim(), p.dim(), "kl_divergence");
    check_same_dim(q.cov.rows(), p.cov.rows(), "kl_divergence");
    const auto lq = linalg::cholesky(q.cov, "kl_divergence: covariance of q");
    const auto lp = linalg::cholesky(p.cov, "kl_divergence: covariance of p");
    const Eigen::Index d = q.dim();
    const double trace_term = lp.solve(q.cov).trace();
    const Vector diff = p.mean - q.mean;
    const double maha = diff.dot(lp.solve(diff));
    const double kl = 0.5 * (trace_term + maha - static_cast<double>(d) +
                             linalg::logdet_from_cholesky(lp) - linalg::logdet_from_cholesky(lq));
    return std::max(kl, 0.0);
}

Product product(const ExpFam& a, const ExpFam& b) {
    check_same_dim(a.dim(), b.dim(), "product");
    ExpFam sum = a + b;
    const double log_z = log_normalizer(sum) - log_normalizer(a) - log_normalizer(b);
    return {std::move(sum), log_z};
}

double expected_log_density(const ExpFam& target, const Moments& under) {
    check_same_dim(target.dim(), under.dim(), "expected_log_density");
    const Vector& mu = under.mean;
    const double quad = (target.J().cwiseProduct(under.cov + mu * mu.transpose())).sum();
    return target.h().dot(mu) - 0.5 * quad - log_normalizer(target);
}

double log_density(const ExpFam& g, const Vector& z) {
    check_same_dim(g.dim(), z.size(), "log_density");
    return g.h().dot(z) - 0.5 * z.dot(g.J() * z) - log_normalizer(g);
}

}  // namespace rpgssm::gaussian
