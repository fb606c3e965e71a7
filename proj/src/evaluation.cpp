#include "rpgssm/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "rpgssm/parallel.hpp"
#include "rpgssm/random.hpp"

namespace rpgssm::evaluation {

namespace {

using Index = Eigen::Index;

Matrix gather(const SequenceArray& a, const std::vector<Index>& seqs) {
    Matrix out(static_cast<Index>(seqs.size()) * a.steps, a.width());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        out.middleRows(static_cast<Index>(i) * a.steps, a.steps) = a.sequence(seqs[i]);
    }
    return out;
}

smoother::PotentialSequence potentials(const recognition::RecognitionModel& model, const Matrix& rows) {
    const recognition::BatchOutput out = model.apply_batch(rows);
    const Index d = model.spec().latent_dim;
    smoother::PotentialSequence seq;
    seq.reserve(static_cast<std::size_t>(rows.rows()));
    for (Index t = 0; t < rows.rows(); ++t) {
        seq.emplace_back(out.H.row(t).transpose(), linalg::unflatten(out.Jflat.row(t), d));
    }
    return seq;
}

}  // namespace

Matrix RegressionReport::predict(const Matrix& features) const {
    if (features.cols() != weights.rows()) throw std::invalid_argument("predict: feature width does not match the fit");
    Matrix out = features * weights;
    out.rowwise() += intercept;
    return out;
}

Vector r2_score(const Matrix& truth, const Matrix& predicted) {
    if (truth.rows() != predicted.rows() || truth.cols() != predicted.cols()) {
        throw std::invalid_argument("r2_score: shapes differ");
    }
    if (truth.rows() < 1) throw std::invalid_argument("r2_score: no rows");
    Vector r2(truth.cols());
    for (Index j = 0; j < truth.cols(); ++j) {
        const double mean = truth.col(j).mean();
        const double ss_tot = (truth.col(j).array() - mean).square().sum();
        const double ss_res = (truth.col(j) - predicted.col(j)).squaredNorm();
        if (ss_tot > 0.0) {
            r2(j) = 1.0 - ss_res / ss_tot;
        } else {
            r2(j) = ss_res == 0.0 ? 1.0 : 0.0;
        }
    }
    return r2;
}

void split_sequences(Index count, std::uint64_t seed, std::vector<Index>& train, std::vector<Index>& test) {
    if (count < 2) throw std::invalid_argument("split: need at least two sequences for a train/test split");
    std::vector<Index> order(static_cast<std::size_t>(count));
    std::iota(order.begin(), order.end(), Index{0});
    random::Engine rng(random::derive_seed(seed, "regression-split"));
    for (Index i = count - 1; i > 0; --i) {
        std::uniform_int_distribution<Index> pick(0, i);
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }
    const Index n_test = std::max<Index>(1, (count + 2) / 5);  // round(0.2 * count)
    test.assign(order.begin(), order.begin() + n_test);
    train.assign(order.begin() + n_test, order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
}

RegressionReport fit_r2(const SequenceArray& features, const SequenceArray& targets, std::uint64_t split_seed,
                        Split split) {
    if (features.sequences != targets.sequences || features.steps != targets.steps) {
        throw std::invalid_argument("fit_r2: features and targets cover different sequences or lengths");
    }
    if (features.sequences < 1 || features.steps < 1) throw std::invalid_argument("fit_r2: empty input");
    RegressionReport rep;
    if (split == Split::holdout) {
        split_sequences(features.sequences, split_seed, rep.train_sequences, rep.test_sequences);
        rep.split = "holdout-80-20";
    } else {
        rep.train_sequences.resize(static_cast<std::size_t>(features.sequences));
        std::iota(rep.train_sequences.begin(), rep.train_sequences.end(), Index{0});
        rep.test_sequences = rep.train_sequences;
        rep.split = "none";
    }

    const Matrix Xtr = gather(features, rep.train_sequences);
    const Matrix Ytr = gather(targets, rep.train_sequences);
    if (Xtr.rows() < 2) throw std::invalid_argument("fit_r2: need at least two training rows");
    const Index p = features.width() + 1;
    Matrix design(Xtr.rows(), p);
    design.leftCols(p - 1) = Xtr;
    design.col(p - 1).setOnes();

    Matrix coef;
    const Eigen::ColPivHouseholderQR<Matrix> qr(design);
    if (qr.rank() == p) {
        coef = qr.solve(Ytr);
    } else {
        rep.ridge_fallback = true;
        const Matrix gram = design.transpose() * design + 1e-8 * Matrix::Identity(p, p);
        coef = gram.ldlt().solve(design.transpose() * Ytr);
    }
    rep.weights = coef.topRows(p - 1);
    rep.intercept = coef.row(p - 1);

    const Matrix Xte = gather(features, rep.test_sequences);
    const Matrix Yte = gather(targets, rep.test_sequences);
    rep.r2 = r2_score(Yte, rep.predict(Xte));
    rep.mean_r2 = rep.r2.mean();
    return rep;
}

std::vector<smoother::SmoothedPosterior> smooth_all(const recognition::RecognitionModel& model,
                                                    const prior::StablePrior& prior,
                                                    const SequenceArray& observations, kernels::Exec exec) {
    if (observations.width() != model.spec().input_dim) {
        throw std::invalid_argument("smooth_all: observation width " + std::to_string(observations.width()) +
                                    " does not match the model input " + std::to_string(model.spec().input_dim));
    }
    if (prior.latent_dim() != model.spec().latent_dim) {
        throw std::invalid_argument("smooth_all: prior and recognition latent dimensions differ");
    }
    std::vector<smoother::SmoothedPosterior> out(static_cast<std::size_t>(observations.sequences));
    parallel_for(observations.sequences, exec, [&](Index n) {
        out[static_cast<std::size_t>(n)] = smoother::smooth(prior, potentials(model, observations.sequence(n)));
    });
    return out;
}

SequenceArray posterior_means(const std::vector<smoother::SmoothedPosterior>& posteriors) {
    if (posteriors.empty()) return {};
    const Index T = posteriors.front().steps();
    const Index d = posteriors.front().marginals.front().dim();
    SequenceArray out(static_cast<Index>(posteriors.size()), T, d);
    for (std::size_t n = 0; n < posteriors.size(); ++n) {
        if (posteriors[n].steps() != T) throw std::invalid_argument("posterior_means: ragged posteriors");
        for (Index t = 0; t < T; ++t) {
            out.rows.row(static_cast<Index>(n) * T + t) = posteriors[n].marginals[static_cast<std::size_t>(t)].mean.transpose();
        }
    }
    return out;
}

Matrix rollout_predict(const recognition::RecognitionModel& model, const prior::StablePrior& prior,
                       const Matrix& sequence, Index context, Index horizon) {
    if (context < 1) throw std::invalid_argument("rollout: context must be at least 1");
    if (horizon < 0) throw std::invalid_argument("rollout: horizon must be non-negative");
    if (context > sequence.rows()) throw std::invalid_argument("rollout: context exceeds the sequence length");
    const Index d = prior.latent_dim();
    Matrix out(horizon, d);
    if (horizon == 0) return out;
    const smoother::SmoothedPosterior post = smoother::smooth(prior, potentials(model, sequence.topRows(context)));
    Vector mu = post.marginals.back().mean;
    for (Index k = 0; k < horizon; ++k) {
        mu = prior.A() * mu;
        out.row(k) = mu.transpose();
    }
    return out;
}

void write_report_csv(std::ostream& out, const RegressionReport& report, const std::vector<std::string>& names) {
    out << "target,r2\n" << std::setprecision(17);
    for (Index j = 0; j < report.r2.size(); ++j) {
        const auto i = static_cast<std::size_t>(j);
        out << (i < names.size() ? names[i] : "target" + std::to_string(j)) << ',' << report.r2(j) << '\n';
    }
    out << "mean," << report.mean_r2 << '\n';
}

}  // namespace rpgssm::evaluation
