#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rpgssm/kernels.hpp"
#include "rpgssm/prior.hpp"
#include "rpgssm/recognition.hpp"
#include "rpgssm/sequences.hpp"
#include "rpgssm/smoother.hpp"

namespace rpgssm::evaluation {

enum class Split {
    holdout,  // 80/20 split of sequences, fit on train, score on test
    none,     // fit and score on every row
};

struct RegressionReport {
    Vector r2;               // per target
    double mean_r2 = 0.0;
    Matrix weights;          // D_Z x D_G
    Eigen::RowVectorXd intercept;
    bool ridge_fallback = false;  // design matrix was rank deficient
    std::string split;
    std::vector<Eigen::Index> train_sequences;
    std::vector<Eigen::Index> test_sequences;

    /// features (K x D_Z) -> predicted targets (K x D_G).
    Matrix predict(const Matrix& features) const;
};

/// OLS with intercept from pooled (sequence, time) rows of `features` to
/// `targets`. Throws std::invalid_argument on mismatched shapes or when
/// fewer than two sequences are available for a holdout split.
RegressionReport fit_r2(const SequenceArray& features, const SequenceArray& targets, std::uint64_t split_seed,
                        Split split = Split::holdout);

/// Per-column 1 - SS_res / SS_tot. A constant column scores 1 when predicted
/// exactly and 0 otherwise.
Vector r2_score(const Matrix& truth, const Matrix& predicted);

/// Sequence-level split: 20% (at least one) of sequences go to test.
void split_sequences(Eigen::Index count, std::uint64_t seed, std::vector<Eigen::Index>& train,
                     std::vector<Eigen::Index>& test);

/// E-step for every sequence of `observations`.
std::vector<smoother::SmoothedPosterior> smooth_all(const recognition::RecognitionModel& model,
                                                    const prior::StablePrior& prior,
                                                    const SequenceArray& observations,
                                                    kernels::Exec exec = kernels::Exec::parallel);

/// Smoothed posterior means as an N x T x D_Z array.
SequenceArray posterior_means(const std::vector<smoother::SmoothedPosterior>& posteriors);

/// Smooths the first `context` steps of `sequence` (T x D_X), then applies
/// mu_{t+1} = A mu_t `horizon` times. Returns horizon x D_Z.
Matrix rollout_predict(const recognition::RecognitionModel& model, const prior::StablePrior& prior,
                       const Matrix& sequence, Eigen::Index context, Eigen::Index horizon);

/// `target,r2` rows followed by `mean,<value>`.
void write_report_csv(std::ostream& out, const RegressionReport& report, const std::vector<std::string>& names);

}  // namespace rpgssm::evaluation
