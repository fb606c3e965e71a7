#include "rpgssm/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rpgssm::linalg {

Matrix symmetrize(const Matrix& m) {
    return 0.5 * (m + m.transpose());
}

double asymmetry(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("asymmetry: matrix is not square");
    }
    if (m.size() == 0) return 0.0;
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

Eigen::LLT<Matrix> cholesky(const Matrix& m, std::string_view what) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument(std::string(what) + ": matrix is not square");
    }
    if (!m.allFinite()) {
        throw std::domain_error(std::string(what) + ": matrix has non-finite entries");
    }
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) {
        throw std::domain_error(std::string(what) + ": matrix is not positive definite");
    }
    const auto diag = llt.matrixLLT().diagonal();
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
        if (!(diag(i) > 0.0) || !std::isfinite(diag(i))) {
            throw std::domain_error(std::string(what) + ": matrix is not positive definite");
        }
    }
    return llt;
}

bool is_positive_definite(const Matrix& m) {
    if (m.rows() != m.cols() || !m.allFinite()) return false;
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return false;
    return (llt.matrixLLT().diagonal().array() > 0.0).all();
}

double logdet_from_cholesky(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

double spectral_radius(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> es(m, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

Eigen::RowVectorXd flatten(const Matrix& m) {
    return Eigen::Map<const Eigen::RowVectorXd>(m.data(), m.size());
}

Matrix unflatten(const Eigen::Ref<const Eigen::RowVectorXd>& row, Eigen::Index dim) {
    if (row.size() != dim * dim) {
        throw std::invalid_argument("unflatten: row length is not dim^2");
    }
    Matrix out(dim, dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index i = 0; i < dim; ++i) out(i, j) = row(j * dim + i);
    return out;
}

}  // namespace rpgssm::linalg
