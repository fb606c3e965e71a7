#pragma once

#include <string_view>

#include <Eigen/Dense>

namespace rpgssm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

namespace linalg {

Matrix symmetrize(const Matrix& m);

// Relative asymmetry max|M - M^T| / max(max|M|, tiny).
double asymmetry(const Matrix& m);

// Cholesky factorization that throws std::domain_error naming `what` when
// the matrix is not numerically positive definite.
Eigen::LLT<Matrix> cholesky(const Matrix& m, std::string_view what);

bool is_positive_definite(const Matrix& m);

double logdet_from_cholesky(const Eigen::LLT<Matrix>& llt);

double spectral_norm(const Matrix& m);
double spectral_radius(const Matrix& m);

// Smallest eigenvalue of the symmetric part.
double min_eigenvalue(const Matrix& m);

// D x D matrix <-> 1 x D^2 row, column-major (entry (i, j) at column j * D + i).
Eigen::RowVectorXd flatten(const Matrix& m);
Matrix unflatten(const Eigen::Ref<const Eigen::RowVectorXd>& row, Eigen::Index dim);

}  // namespace linalg
}  // namespace rpgssm
