#pragma once

#include "rpgssm/linalg.hpp"

namespace rpgssm::gaussian {

/// Multivariate Gaussian in natural parameters: density proportional to
/// exp(h^T z - 1/2 z^T J z). J may be only positive semidefinite when the
/// value is used as an unnormalized factor.
class ExpFam {
public:
    ExpFam() = default;

    /// Symmetrizes J; throws std::invalid_argument if the relative asymmetry
    /// exceeds 1e-8 or the shapes disagree.
    ExpFam(Vector h, Matrix J);

    static ExpFam standard(Eigen::Index dim);

    const Vector& h() const { return h_; }
    const Matrix& J() const { return J_; }
    Eigen::Index dim() const { return h_.size(); }

    ExpFam operator+(const ExpFam& other) const;
    ExpFam operator-(const ExpFam& other) const;

private:
    Vector h_;
    Matrix J_;
};

struct Moments {
    Vector mean;
    Matrix cov;

    Eigen::Index dim() const { return mean.size(); }
};

// Phi(h, J) = 1/2 h^T J^-1 h - 1/2 log det J + D/2 log 2 pi.
// Throws std::domain_error when J is not positive definite.
double log_normalizer(const ExpFam& g);

Moments to_moments(const ExpFam& g);
ExpFam to_natural(const Moments& m);

double entropy(const Moments& m);

double kl_divergence(const Moments& q, const Moments& p);

struct Product {
    ExpFam params;
    /// Phi(a + b) - Phi(a) - Phi(b): log of the integral of the product of the
    /// two normalized densities.
    double log_z;
};

Product product(const ExpFam& a, const ExpFam& b);

/// E_{z ~ under}[log N(z; target)] = h^T mu - 1/2 tr(J (Sigma + mu mu^T)) - Phi(h, J).
double expected_log_density(const ExpFam& target, const Moments& under);

/// log density of the normalized Gaussian `g` at z.
double log_density(const ExpFam& g, const Vector& z);

}  // namespace rpgssm::gaussian
