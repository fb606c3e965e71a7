#pragma once

#include "rpgssm/linalg.hpp"

// Batched Gaussian log-normalizer kernels.
//
// A batch of K Gaussians is stored row-wise: H is K x D (precision-adjusted
// means) and Jflat is K x D^2 (precisions, column-major flattened). Every
// precision is symmetrized before use, so gradients with respect to Jflat are
// symmetric.
//
// Each kernel has an OpenMP path and a serial path that run the same per-row
// code and are bit-identical. The *_reference functions are deliberately naive
// re-implementations on top of gaussian-core, kept for testing.

namespace rpgssm::kernels {

enum class Exec { serial, parallel };

/// Phi(H_r, J_r) for every row; K x 1.
Vector row_log_normalizer(const Matrix& H, const Matrix& Jflat, Exec exec);

struct RowLogNormalizerGrad {
    Matrix dH;
    Matrix dJ;
};

RowLogNormalizerGrad row_log_normalizer_backward(const Matrix& H, const Matrix& Jflat,
                                                 const Vector& grad_out, Exec exec);

/// Mixture term of log Gamma-tilde. Rows are sequence-major (row = n * T + t).
/// For every outer row r = (n, t):
///
///   out_r = log sum_{n'} exp( Phi(Hq_r + Hd_{n'T+t}, Jq_r + Jd_{n'T+t}) - base_{n'T+t} )
///
/// Hq, Jq have Nq * T rows; Hd, Jd, base have Nm * T rows.
struct MixtureInputs {
    const Matrix& Hq;
    const Matrix& Jq;
    const Matrix& Hd;
    const Matrix& Jd;
    const Vector& base;
    Eigen::Index steps;
};

Vector mixture_lse(const MixtureInputs& in, Exec exec);

struct MixtureGrad {
    Matrix dHq;
    Matrix dJq;
    Matrix dHd;
    Matrix dJd;
    Vector dbase;
};

MixtureGrad mixture_lse_backward(const MixtureInputs& in, const Vector& grad_out, Exec exec);

Vector row_log_normalizer_reference(const Matrix& H, const Matrix& Jflat);
Vector mixture_lse_reference(const MixtureInputs& in);
MixtureGrad mixture_lse_backward_reference(const MixtureInputs& in, const Vector& grad_out);

/// Throws std::invalid_argument on inconsistent shapes.
void check_mixture_shapes(const MixtureInputs& in);

}  // namespace rpgssm::kernels
