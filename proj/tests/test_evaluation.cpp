#include <doctest.h>

#include <cmath>
#include <sstream>

#include "rpgssm/evaluation.hpp"
#include "support/generators.hpp"

using namespace rpgssm;
using doctest::Approx;

namespace {

recognition::RecognitionModel small_model(std::uint64_t seed, Eigen::Index dx, Eigen::Index dz) {
    recognition::RecognitionSpec spec;
    spec.input_dim = dx;
    spec.latent_dim = dz;
    return recognition::init(spec, seed);
}

}  // namespace

TEST_CASE("one-dimensional toy regression") {
    // Features [0, 1, 2], targets [0, 1, 3]: slope 3/2, intercept -1/6,
    // residuals (1/6, -1/3, 1/6), SS_res = 1/6, SS_tot = 14/3.
    const SequenceArray x(1, 3, Matrix((Matrix(3, 1) << 0, 1, 2).finished()));
    const SequenceArray y(1, 3, Matrix((Matrix(3, 1) << 0, 1, 3).finished()));
    const auto rep = evaluation::fit_r2(x, y, 0, evaluation::Split::none);
    CHECK(rep.weights(0, 0) == Approx(1.5).epsilon(1e-12));
    CHECK(rep.intercept(0) == Approx(-1.0 / 6.0).epsilon(1e-12));
    CHECK(rep.mean_r2 == Approx(27.0 / 28.0).epsilon(1e-12));
    CHECK(rep.split == "none");
    CHECK_FALSE(rep.ridge_fallback);
}

TEST_CASE("realizable and null regressions") {
    testing::Gen gen(101);
    const SequenceArray f(40, 25, gen.normal(1000, 3));
    const Matrix W = gen.normal(3, 2);
    Matrix targets = f.rows * W;
    targets.rowwise() += Eigen::RowVector2d(0.5, -2.0);
    const auto exact = evaluation::fit_r2(f, SequenceArray(40, 25, targets), 3);
    CHECK(exact.r2.minCoeff() == Approx(1.0).epsilon(1e-12));
    CHECK(exact.predict(f.rows.topRows(5)).isApprox(targets.topRows(5), 1e-10));
    CHECK(exact.test_sequences.size() == 8);
    CHECK(exact.train_sequences.size() == 32);

    const SequenceArray big(500, 100, gen.normal(50000, 3));
    const auto null = evaluation::fit_r2(big, SequenceArray(500, 100, gen.normal(50000, 2)), 4);
    CHECK(std::abs(null.mean_r2) <= 0.1);
    CHECK(null.r2.maxCoeff() <= 1.0);
}

TEST_CASE("R2 is invariant under invertible affine maps of the features") {
    testing::Gen gen(102);
    const SequenceArray f(30, 20, gen.normal(600, 3));
    const SequenceArray y(30, 20, Matrix(f.rows * gen.normal(3, 2) + 0.7 * gen.normal(600, 2)));
    const Matrix M = gen.spd(3) + gen.normal(3, 3) * 0.1;
    Matrix mapped = f.rows * M;
    mapped.rowwise() += Eigen::RowVector3d(1.0, -3.0, 0.25);
    const auto a = evaluation::fit_r2(f, y, 8), b = evaluation::fit_r2(SequenceArray(30, 20, mapped), y, 8);
    CHECK((a.r2 - b.r2).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("rank-deficient design falls back to ridge") {
    testing::Gen gen(103);
    Matrix f = gen.normal(200, 2);
    f.col(1) = 2.0 * f.col(0);
    const SequenceArray y(10, 20, Matrix(f.col(0) * 3.0));
    const auto rep = evaluation::fit_r2(SequenceArray(10, 20, f), y, 1);
    CHECK(rep.ridge_fallback);
    CHECK(rep.mean_r2 == Approx(1.0).epsilon(1e-6));
}

TEST_CASE("r2 score edge cases and errors") {
    const Matrix c = Matrix::Constant(4, 1, 2.0);
    CHECK(evaluation::r2_score(c, c)(0) == 1.0);
    CHECK(evaluation::r2_score(c, Matrix::Constant(4, 1, 1.0))(0) == 0.0);
    // Worse than the mean: negative and reported as is.
    const Matrix t = (Matrix(3, 1) << 0, 1, 2).finished(), p = (Matrix(3, 1) << 2, 1, 0).finished();
    CHECK(evaluation::r2_score(t, p)(0) == Approx(-3.0));
    CHECK_THROWS_AS(evaluation::r2_score(t, c), std::invalid_argument);
    CHECK_THROWS_AS(evaluation::fit_r2(SequenceArray(1, 5, 1), SequenceArray(1, 5, 1), 0), std::invalid_argument);
    CHECK_THROWS_AS(evaluation::fit_r2(SequenceArray(3, 5, 1), SequenceArray(3, 4, 1), 0), std::invalid_argument);
}

TEST_CASE("sequence split") {
    std::vector<Eigen::Index> train, test, train2, test2;
    evaluation::split_sequences(200, 5, train, test);
    evaluation::split_sequences(200, 5, train2, test2);
    CHECK(test.size() == 40);
    CHECK(train.size() == 160);
    CHECK(test == test2);
    std::vector<Eigen::Index> all = train;
    all.insert(all.end(), test.begin(), test.end());
    std::sort(all.begin(), all.end());
    for (Eigen::Index i = 0; i < 200; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
    evaluation::split_sequences(2, 0, train, test);
    CHECK(test.size() == 1);
}

TEST_CASE("rollout") {
    testing::Gen gen(104);
    const auto model = small_model(1, 3, 2);
    const Matrix seq = gen.normal(30, 3);

    const prior::StablePrior still(Matrix::Zero(2, 2));
    const Matrix zero = evaluation::rollout_predict(model, still, seq, 10, 5);
    CHECK(zero.rows() == 5);
    CHECK(zero.isZero(0.0));

    const Matrix A = gen.with_norm(2, 0.8);
    const prior::StablePrior prior(A);
    const Matrix pred = evaluation::rollout_predict(model, prior, seq, 12, 20);
    const auto post = smoother::smooth(prior, [&] {
        const auto out = model.apply_batch(seq.topRows(12));
        smoother::PotentialSequence s;
        for (Eigen::Index t = 0; t < 12; ++t) s.emplace_back(out.H.row(t).transpose(), linalg::unflatten(out.Jflat.row(t), 2));
        return s;
    }());
    CHECK(pred.row(0).transpose() == A * post.marginals.back().mean);
    for (Eigen::Index k = 1; k < pred.rows(); ++k) {
        CHECK(pred.row(k).norm() <= 0.8 * pred.row(k - 1).norm() + 1e-12);
    }
    CHECK(evaluation::rollout_predict(model, prior, seq, 12, 0).rows() == 0);
    CHECK_THROWS_AS(evaluation::rollout_predict(model, prior, seq, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(evaluation::rollout_predict(model, prior, seq, 31, 3), std::invalid_argument);
}

TEST_CASE("smoothing a dataset and reporting") {
    testing::Gen gen(105);
    const auto model = small_model(2, 3, 2);
    const SequenceArray obs(4, 6, gen.normal(24, 3));
    const prior::StablePrior prior(gen.with_norm(2, 0.5));
    const auto serial = evaluation::smooth_all(model, prior, obs, kernels::Exec::serial);
    const auto parallel = evaluation::smooth_all(model, prior, obs, kernels::Exec::parallel);
    const SequenceArray means = evaluation::posterior_means(serial);
    CHECK(means.sequences == 4);
    CHECK(means.width() == 2);
    CHECK(means.rows == evaluation::posterior_means(parallel).rows);
    CHECK_THROWS_AS(evaluation::smooth_all(model, prior, SequenceArray(2, 3, 4)), std::invalid_argument);

    evaluation::RegressionReport rep;
    rep.r2 = Eigen::Vector2d(0.5, 0.25);
    rep.mean_r2 = 0.375;
    std::ostringstream csv;
    evaluation::write_report_csv(csv, rep, {"sin_theta"});
    CHECK(csv.str() == "target,r2\nsin_theta,0.5\ntarget1,0.25\nmean,0.375\n");
}
