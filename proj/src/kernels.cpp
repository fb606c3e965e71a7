#include "rpgssm/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rpgssm/gaussian.hpp"
#include "rpgssm/parallel.hpp"

namespace rpgssm::kernels {

namespace {

using Index = Eigen::Index;

Index dim_from_flat(Index cols, const char* what) {
    const auto d = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(cols))));
    if (d * d != cols) {
        throw std::invalid_argument(std::string(what) + ": precision rows must have D^2 columns");
    }
    return d;
}

// Per-thread scratch space for a D-dimensional Cholesky with caching of the
// last factorized precision.
struct Scratch {
    explicit Scratch(Index d)
        : dim(d), J(d, d), cached(d, d), llt(d), Jinv(d, d), h(d), v(d) {}

    // Factorizes sym(a + b) where a, b point to flattened D^2 rows (b may be
    // null). Reuses the previous factorization when the matrix is unchanged.
    void factorize(const double* a, const double* b) {
        for (Index j = 0; j < dim; ++j) {
            for (Index i = 0; i < dim; ++i) {
                double x = a[j * dim + i] + a[i * dim + j];
                if (b != nullptr) x += b[j * dim + i] + b[i * dim + j];
                J(i, j) = 0.5 * x;
            }
        }
        if (valid && J == cached) return;
        llt.compute(J);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all() ||
            !llt.matrixLLT().allFinite()) {
            valid = false;
            throw std::domain_error("log-normalizer kernel: precision matrix is not positive definite");
        }
        cached = J;
        logdet = linalg::logdet_from_cholesky(llt);
        inverse_ready = false;
        valid = true;
    }

    const Matrix& inverse() {
        if (!inverse_ready) {
            Jinv = llt.solve(Matrix::Identity(dim, dim));
            Jinv = linalg::symmetrize(Jinv);
            inverse_ready = true;
        }
        return Jinv;
    }

    // Phi at the current factorization for the vector in `h`; leaves J^-1 h in v.
    double log_normalizer() {
        v = llt.solve(h);
        return 0.5 * h.dot(v) - 0.5 * logdet + 0.5 * static_cast<double>(dim) * kLog2Pi;
    }

    Index dim;
    Matrix J;
    Matrix cached;
    Eigen::LLT<Matrix> llt;
    Matrix Jinv;
    Vector h;
    Vector v;
    double logdet = 0.0;
    bool valid = false;
    bool inverse_ready = false;
};

double log_sum_exp(const Vector& x) {
    const double mx = x.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((x.array() - mx).exp().sum());
}

// Adds coef * (-1/2)(v v^T + Jinv), flattened, into dst.
void add_precision_grad(double* dst, double coef, const Vector& v, const Matrix& Jinv) {
    const Index d = v.size();
    for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < d; ++i) dst[j * d + i] += -0.5 * coef * (v(i) * v(j) + Jinv(i, j));
}


// True when every row r = n * steps + t (n < count) of `rows` equals the first, bit for bit.
bool rows_shared_at(const RowMatrix& rows, Index count, Index steps, Index t) {
    const auto first = rows.row(t);
    for (Index n = 1; n < count; ++n) {
        if (rows.row(n * steps + t) != first) return false;
    }
    return true;
}

// Mixture terms at one step when all outer precisions agree and all mixture
// precisions agree. With J = L L^T, u = L^-1 h:
//   Phi(h_a + h_b, J) = 1/2 |u_a|^2 + u_a . u_b + 1/2 |u_b|^2 - 1/2 log det J + D/2 log 2 pi.
struct SharedStep {
    Eigen::LLT<Matrix> llt;
    double logdet = 0.0;
    Matrix vals;  // n_outer x n_mix, before the log-sum-exp

    SharedStep(const RowMatrix& Hq, const RowMatrix& Jq, const RowMatrix& Hd, const RowMatrix& Jd,
               const Vector& base, Index steps, Index t, Index n_outer, Index n_mix) {
        const Index d = Hq.cols();
        Matrix J(d, d);
        const double* a = Jq.row(t).data();
        const double* b = Jd.row(t).data();
        for (Index j = 0; j < d; ++j)
            for (Index i = 0; i < d; ++i)
                J(i, j) = 0.5 * (a[j * d + i] + a[i * d + j] + b[j * d + i] + b[i * d + j]);
        llt.compute(J);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all() ||
            !llt.matrixLLT().allFinite()) {
            throw std::domain_error("log-normalizer kernel: precision matrix is not positive definite");
        }
        logdet = linalg::logdet_from_cholesky(llt);
        Matrix Uq(d, n_outer), Ud(d, n_mix);
        for (Index n = 0; n < n_outer; ++n) Uq.col(n) = Hq.row(n * steps + t).transpose();
        for (Index k = 0; k < n_mix; ++k) Ud.col(k) = Hd.row(k * steps + t).transpose();
        llt.matrixL().solveInPlace(Uq);
        llt.matrixL().solveInPlace(Ud);
        const double c = -0.5 * logdet + 0.5 * static_cast<double>(d) * kLog2Pi;
        vals = Uq.transpose() * Ud;
        for (Index k = 0; k < n_mix; ++k) {
            const double col = 0.5 * Ud.col(k).squaredNorm() + c - base(k * steps + t);
            for (Index n = 0; n < n_outer; ++n) vals(n, k) += 0.5 * Uq.col(n).squaredNorm() + col;
        }
    }
};


// Backward of SharedStep. With weights W(n, k) = grad_n softmax_k(vals(n, .)),
// Vq = J^-1 hq and Vd = J^-1 hd, every pair has v = Vq_n + Vd_k, so the sums
// over pairs collapse into products with W.
void shared_backward(const RowMatrix& Hq, const RowMatrix& Jq, const RowMatrix& Hd, const RowMatrix& Jd,
                     const Vector& base, const Vector& grad_out, Index steps, Index t, Index n_outer, Index n_mix,
                     RowMatrix& dHq, RowMatrix& dJq, RowMatrix& dHd, RowMatrix& dJd, Vector& dbase) {
    const Index d = Hq.cols();
    const SharedStep shared(Hq, Jq, Hd, Jd, base, steps, t, n_outer, n_mix);
    Matrix W(n_outer, n_mix);
    for (Index n = 0; n < n_outer; ++n) {
        const double lse = log_sum_exp(shared.vals.row(n).transpose());
        W.row(n) = grad_out(n * steps + t) * (shared.vals.row(n).array() - lse).exp();
    }
    const Matrix Jinv = linalg::symmetrize(shared.llt.solve(Matrix::Identity(d, d)));
    Matrix Vq(n_outer, d), Vd(n_mix, d);
    for (Index n = 0; n < n_outer; ++n) Vq.row(n) = Hq.row(n * steps + t);
    for (Index k = 0; k < n_mix; ++k) Vd.row(k) = Hd.row(k * steps + t);
    Vq = Vq * Jinv;
    Vd = Vd * Jinv;
    // Flattened outer products v v^T, one row each.
    auto outer_rows = [d](const Matrix& V) {
        Matrix out(V.rows(), d * d);
        for (Index r = 0; r < V.rows(); ++r)
            for (Index j = 0; j < d; ++j)
                for (Index i = 0; i < d; ++i) out(r, j * d + i) = V(r, i) * V(r, j);
        return out;
    };
    const Vector row_w = W.rowwise().sum();
    const Vector col_w = W.colwise().sum().transpose();
    const Matrix WVd = W * Vd;
    const Matrix WtVq = W.transpose() * Vq;
    const Matrix WVdVd = W * outer_rows(Vd);
    const Matrix WtVqVq = W.transpose() * outer_rows(Vq);
    const Eigen::RowVectorXd jinv_flat = linalg::flatten(Jinv);

    auto precision_grad = [&](double s, const Eigen::RowVectorXd& v, const Eigen::RowVectorXd& cross,
                              const Eigen::RowVectorXd& moments, double* dst) {
        for (Index j = 0; j < d; ++j) {
            for (Index i = 0; i < d; ++i) {
                const Index f = j * d + i;
                dst[f] += -0.5 * (s * (v(i) * v(j) + jinv_flat(f)) + v(i) * cross(j) + cross(i) * v(j) + moments(f));
            }
        }
    };
    for (Index n = 0; n < n_outer; ++n) {
        const Index r = n * steps + t;
        dHq.row(r) += row_w(n) * Vq.row(n) + WVd.row(n);
        precision_grad(row_w(n), Vq.row(n), WVd.row(n), WVdVd.row(n), dJq.row(r).data());
    }
    for (Index k = 0; k < n_mix; ++k) {
        const Index m = k * steps + t;
        dHd.row(m) += col_w(k) * Vd.row(k) + WtVq.row(k);
        precision_grad(col_w(k), Vd.row(k), WtVq.row(k), WtVqVq.row(k), dJd.row(m).data());
        dbase(m) -= col_w(k);
    }
}

}  // namespace

Vector row_log_normalizer(const Matrix& H, const Matrix& Jflat, Exec exec) {
    const Index d = H.cols();
    if (Jflat.rows() != H.rows() || dim_from_flat(Jflat.cols(), "row_log_normalizer") != d) {
        throw std::invalid_argument("row_log_normalizer: H and Jflat shapes disagree");
    }
    const RowMatrix Hr = H;
    const RowMatrix Jr = Jflat;
    Vector out(H.rows());
    parallel_for(H.rows(), exec, [&](Index r) {
        Scratch s(d);
        s.factorize(Jr.row(r).data(), nullptr);
        s.h = Hr.row(r).transpose();
        out(r) = s.log_normalizer();
    });
    return out;
}

RowLogNormalizerGrad row_log_normalizer_backward(const Matrix& H, const Matrix& Jflat,
                                                 const Vector& grad_out, Exec exec) {
    const Index d = H.cols();
    if (Jflat.rows() != H.rows() || grad_out.size() != H.rows() ||
        dim_from_flat(Jflat.cols(), "row_log_normalizer_backward") != d) {
        throw std::invalid_argument("row_log_normalizer_backward: shapes disagree");
    }
    const RowMatrix Hr = H;
    const RowMatrix Jr = Jflat;
    RowMatrix dH = RowMatrix::Zero(H.rows(), d);
    RowMatrix dJ = RowMatrix::Zero(H.rows(), d * d);
    parallel_for(H.rows(), exec, [&](Index r) {
        Scratch s(d);
        s.factorize(Jr.row(r).data(), nullptr);
        s.h = Hr.row(r).transpose();
        s.log_normalizer();
        const double g = grad_out(r);
        dH.row(r) = g * s.v.transpose();
        add_precision_grad(dJ.row(r).data(), g, s.v, s.inverse());
    });
    return {Matrix(dH), Matrix(dJ)};
}

void check_mixture_shapes(const MixtureInputs& in) {
    const Index d = in.Hq.cols();
    if (in.steps <= 0) throw std::invalid_argument("mixture_lse: steps must be positive");
    if (in.Hd.cols() != d || dim_from_flat(in.Jq.cols(), "mixture_lse") != d ||
        dim_from_flat(in.Jd.cols(), "mixture_lse") != d) {
        throw std::invalid_argument("mixture_lse: latent dimensions disagree");
    }
    if (in.Jq.rows() != in.Hq.rows() || in.Jd.rows() != in.Hd.rows() || in.base.size() != in.Hd.rows()) {
        throw std::invalid_argument("mixture_lse: row counts disagree");
    }
    if (in.Hq.rows() % in.steps != 0 || in.Hd.rows() % in.steps != 0 || in.Hd.rows() == 0) {
        throw std::invalid_argument("mixture_lse: row counts are not multiples of the step count");
    }
}

Vector mixture_lse(const MixtureInputs& in, Exec exec) {
    check_mixture_shapes(in);
    const Index d = in.Hq.cols();
    const Index steps = in.steps;
    const Index n_outer = in.Hq.rows() / steps;
    const Index n_mix = in.Hd.rows() / steps;
    const RowMatrix Hq = in.Hq, Jq = in.Jq, Hd = in.Hd, Jd = in.Jd;
    Vector out(in.Hq.rows());
    parallel_for(steps, exec, [&](Index t) {
        if (rows_shared_at(Jq, n_outer, steps, t) && rows_shared_at(Jd, n_mix, steps, t)) {
            const SharedStep shared(Hq, Jq, Hd, Jd, in.base, steps, t, n_outer, n_mix);
            for (Index n = 0; n < n_outer; ++n) out(n * steps + t) = log_sum_exp(shared.vals.row(n).transpose());
            return;
        }
        Scratch s(d);
        Vector vals(n_mix);
        for (Index n = 0; n < n_outer; ++n) {
            const Index r = n * steps + t;
            for (Index k = 0; k < n_mix; ++k) {
                const Index m = k * steps + t;
                s.factorize(Jq.row(r).data(), Jd.row(m).data());
                s.h = (Hq.row(r) + Hd.row(m)).transpose();
                vals(k) = s.log_normalizer() - in.base(m);
            }
            out(r) = log_sum_exp(vals);
        }
    });
    return out;
}

MixtureGrad mixture_lse_backward(const MixtureInputs& in, const Vector& grad_out, Exec exec) {
    check_mixture_shapes(in);
    if (grad_out.size() != in.Hq.rows()) {
        throw std::invalid_argument("mixture_lse_backward: gradient has wrong length");
    }
    const Index d = in.Hq.cols();
    const Index steps = in.steps;
    const Index n_outer = in.Hq.rows() / steps;
    const Index n_mix = in.Hd.rows() / steps;
    const RowMatrix Hq = in.Hq, Jq = in.Jq, Hd = in.Hd, Jd = in.Jd;
    RowMatrix dHq = RowMatrix::Zero(Hq.rows(), d), dJq = RowMatrix::Zero(Jq.rows(), d * d);
    RowMatrix dHd = RowMatrix::Zero(Hd.rows(), d), dJd = RowMatrix::Zero(Jd.rows(), d * d);
    Vector dbase = Vector::Zero(in.base.size());

    // Rows touched for a given t are disjoint from every other t.
    parallel_for(steps, exec, [&](Index t) {
        if (rows_shared_at(Jq, n_outer, steps, t) && rows_shared_at(Jd, n_mix, steps, t)) {
            shared_backward(Hq, Jq, Hd, Jd, in.base, grad_out, steps, t, n_outer, n_mix, dHq, dJq, dHd, dJd, dbase);
            return;
        }
        Scratch s(d);
        Vector vals(n_mix);
        Matrix vs(d, n_mix);
        for (Index n = 0; n < n_outer; ++n) {
            const Index r = n * steps + t;
            for (Index k = 0; k < n_mix; ++k) {
                const Index m = k * steps + t;
                s.factorize(Jq.row(r).data(), Jd.row(m).data());
                s.h = (Hq.row(r) + Hd.row(m)).transpose();
                vals(k) = s.log_normalizer() - in.base(m);
                vs.col(k) = s.v;
            }
            const double lse = log_sum_exp(vals);
            for (Index k = 0; k < n_mix; ++k) {
                const Index m = k * steps + t;
                const double coef = grad_out(r) * std::exp(vals(k) - lse);
                if (coef == 0.0) continue;
                // Refactorizes only when the precision differs from the last pair.
                s.factorize(Jq.row(r).data(), Jd.row(m).data());
                const Matrix& Jinv = s.inverse();
                dHq.row(r) += coef * vs.col(k).transpose();
                dHd.row(m) += coef * vs.col(k).transpose();
                add_precision_grad(dJq.row(r).data(), coef, vs.col(k), Jinv);
                add_precision_grad(dJd.row(m).data(), coef, vs.col(k), Jinv);
                dbase(m) -= coef;
            }
        }
    });
    return {Matrix(dHq), Matrix(dJq), Matrix(dHd), Matrix(dJd), std::move(dbase)};
}

// ---------------------------------------------------------------------------
// Serial references.

namespace {

gaussian::ExpFam row_gaussian(const Matrix& H, const Matrix& Jflat, Index r) {
    const Index d = H.cols();
    const Matrix J = linalg::unflatten(Jflat.row(r), d);
    return gaussian::ExpFam(H.row(r).transpose(), linalg::symmetrize(J));
}

}  // namespace

Vector row_log_normalizer_reference(const Matrix& H, const Matrix& Jflat) {
    Vector out(H.rows());
    for (Index r = 0; r < H.rows(); ++r) out(r) = gaussian::log_normalizer(row_gaussian(H, Jflat, r));
    return out;
}

Vector mixture_lse_reference(const MixtureInputs& in) {
    check_mixture_shapes(in);
    const Index steps = in.steps;
    const Index n_outer = in.Hq.rows() / steps;
    const Index n_mix = in.Hd.rows() / steps;
    Vector out(in.Hq.rows());
    for (Index n = 0; n < n_outer; ++n) {
        for (Index t = 0; t < steps; ++t) {
            const Index r = n * steps + t;
            const auto q = row_gaussian(in.Hq, in.Jq, r);
            double mx = -std::numeric_limits<double>::infinity();
            std::vector<double> vals;
            for (Index k = 0; k < n_mix; ++k) {
                const Index m = k * steps + t;
                const double v = gaussian::log_normalizer(q + row_gaussian(in.Hd, in.Jd, m)) - in.base(m);
                vals.push_back(v);
                mx = std::max(mx, v);
            }
            double acc = 0.0;
            for (double v : vals) acc += std::exp(v - mx);
            out(r) = mx + std::log(acc);
        }
    }
    return out;
}

MixtureGrad mixture_lse_backward_reference(const MixtureInputs& in, const Vector& grad_out) {
    check_mixture_shapes(in);
    const Index d = in.Hq.cols();
    const Index steps = in.steps;
    const Index n_outer = in.Hq.rows() / steps;
    const Index n_mix = in.Hd.rows() / steps;
    MixtureGrad g{Matrix::Zero(in.Hq.rows(), d), Matrix::Zero(in.Jq.rows(), d * d),
                  Matrix::Zero(in.Hd.rows(), d), Matrix::Zero(in.Jd.rows(), d * d),
                  Vector::Zero(in.base.size())};
    const Vector out = mixture_lse_reference(in);
    for (Index n = 0; n < n_outer; ++n) {
        for (Index t = 0; t < steps; ++t) {
            const Index r = n * steps + t;
            const auto q = row_gaussian(in.Hq, in.Jq, r);
            for (Index k = 0; k < n_mix; ++k) {
                const Index m = k * steps + t;
                const auto pair = q + row_gaussian(in.Hd, in.Jd, m);
                const double phi = gaussian::log_normalizer(pair);
                const double w = std::exp(phi - in.base(m) - out(r));
                const Matrix Jinv = pair.J().inverse();
                const Vector v = Jinv * pair.h();
                const Matrix dJ = -0.5 * (v * v.transpose() + Jinv);
                const double coef = grad_out(r) * w;
                g.dHq.row(r) += coef * v.transpose();
                g.dHd.row(m) += coef * v.transpose();
                g.dJq.row(r) += coef * linalg::flatten(dJ);
                g.dJd.row(m) += coef * linalg::flatten(dJ);
                g.dbase(m) -= coef;
            }
        }
    }
    return g;
}

}  // namespace rpgssm::kernels
