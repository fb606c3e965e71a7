#include <doctest.h>

#include "rpgssm/kernels.hpp"
#include "support/generators.hpp"

using namespace rpgssm;
using kernels::Exec;

namespace {

Matrix precisions(testing::Gen& gen, Eigen::Index rows, Eigen::Index d, bool shared) {
    Matrix out(rows, d * d);
    const Matrix fixed = gen.spd(d, 0.5);
    for (Eigen::Index r = 0; r < rows; ++r) out.row(r) = linalg::flatten(shared ? fixed : gen.spd(d, 0.5));
    return out;
}

double max_rel(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("row log-normalizer: serial, parallel and reference agree") {
    testing::Gen gen(31);
    const Matrix H = gen.normal(57, 3), J = precisions(gen, 57, 3, false);
    const Vector s = kernels::row_log_normalizer(H, J, Exec::serial);
    const Vector p = kernels::row_log_normalizer(H, J, Exec::parallel);
    CHECK(s == p);
    CHECK(max_rel(s, kernels::row_log_normalizer_reference(H, J)) <= 1e-12);

    const Vector g = gen.normal(57, 1);
    const auto bs = kernels::row_log_normalizer_backward(H, J, g, Exec::serial);
    const auto bp = kernels::row_log_normalizer_backward(H, J, g, Exec::parallel);
    CHECK(bs.dH == bp.dH);
    CHECK(bs.dJ == bp.dJ);
}

TEST_CASE("mixture kernel: serial, parallel and reference agree") {
    testing::Gen gen(32);
    for (const bool shared : {false, true}) {
        CAPTURE(shared);
        const Eigen::Index d = 3, steps = 7, nq = 4, nm = 5;
        const Matrix Hq = gen.normal(nq * steps, d), Jq = precisions(gen, nq * steps, d, shared);
        const Matrix Hd = gen.normal(nm * steps, d), Jd = precisions(gen, nm * steps, d, shared);
        const Vector base = gen.normal(nm * steps, 1), grad = gen.normal(nq * steps, 1);
        const kernels::MixtureInputs in{Hq, Jq, Hd, Jd, base, steps};

        const Vector s = kernels::mixture_lse(in, Exec::serial);
        CHECK(s == kernels::mixture_lse(in, Exec::parallel));
        CHECK(max_rel(s, kernels::mixture_lse_reference(in)) <= 1e-11);

        const auto bs = kernels::mixture_lse_backward(in, grad, Exec::serial);
        const auto bp = kernels::mixture_lse_backward(in, grad, Exec::parallel);
        const auto br = kernels::mixture_lse_backward_reference(in, grad);
        CHECK(bs.dHq == bp.dHq);
        CHECK(bs.dJq == bp.dJq);
        CHECK(bs.dHd == bp.dHd);
        CHECK(bs.dJd == bp.dJd);
        CHECK(bs.dbase == bp.dbase);
        CHECK(max_rel(bs.dHq, br.dHq) <= 1e-10);
        CHECK(max_rel(bs.dJq, br.dJq) <= 1e-10);
        CHECK(max_rel(bs.dHd, br.dHd) <= 1e-10);
        CHECK(max_rel(bs.dJd, br.dJd) <= 1e-10);
        CHECK(max_rel(bs.dbase, br.dbase) <= 1e-10);
    }
}

TEST_CASE("mixture kernel rejects inconsistent shapes and indefinite precisions") {
    testing::Gen gen(33);
    const Matrix H = gen.normal(6, 2), J = precisions(gen, 6, 2, false), Hbad = gen.normal(5, 2);
    const Vector base = gen.normal(6, 1);
    CHECK_THROWS_AS(kernels::check_mixture_shapes({H, J, Hbad, J, base, 3}), std::invalid_argument);
    CHECK_THROWS_AS(kernels::check_mixture_shapes({H, J, H, J, base, 4}), std::invalid_argument);

    Matrix indefinite = J;
    indefinite.row(0) = linalg::flatten(-2.0 * Matrix::Identity(2, 2));
    CHECK_THROWS_AS(kernels::row_log_normalizer(H, indefinite, Exec::serial), std::domain_error);
}
