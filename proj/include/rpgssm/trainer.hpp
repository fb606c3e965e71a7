#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "rpgssm/autodiff.hpp"
#include "rpgssm/gaussian.hpp"
#include "rpgssm/prior.hpp"
#include "rpgssm/recognition.hpp"
#include "rpgssm/sequences.hpp"
#include "rpgssm/smoother.hpp"

namespace rpgssm::trainer {

enum class MixtureScope { batch, full };

struct TrainConfig {
    recognition::RecognitionSpec recognition;
    Eigen::Index batch_size = 32;
    double learning_rate = 1e-3;
    long iterations = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_eps = 1e-3;
    std::uint64_t seed = 0;
    MixtureScope mixture_scope = MixtureScope::batch;
    int m_steps = 1;  // gradient steps per E-step
    // Differentiate through the E-step and ascend the bound with the
    // auxiliary factors' normalization kept (see Objective). Off: posteriors
    // are held fixed during the M-step.
    bool posterior_gradient = true;
    kernels::Exec exec = kernels::Exec::parallel;
};

/// Throws std::invalid_argument on an unusable config.
void validate(const TrainConfig& config);

struct AdamState {
    std::vector<Matrix> first;
    std::vector<Matrix> second;
    long step = 0;
};

struct TrainState {
    Matrix transition;
    recognition::RecognitionModel recognition;
    AdamState adam;  // recognition parameters in order, then the transition matrix
    long iteration = 0;

    prior::StablePrior prior() const { return prior::StablePrior(transition); }
};

/// A ~ N(0, 1/D_Z) entrywise, clipped to operator norm 0.95; recognition from
/// recognition::init. Deterministic per config.seed.
TrainState init_state(const TrainConfig& config);

/// log Gamma-tilde for one (t, n):
///   Phi(eta0 + delta_n) - Phi(eta0) - Phi(delta_n) - log N
///     + log sum_{n'} exp(Phi(q_n + delta_{n'}) - Phi(eta0 + delta_{n'}))
/// with N = batch_deltas.size().
double log_gamma_tilde(const gaussian::ExpFam& eta0, const gaussian::ExpFam& delta_n, const gaussian::ExpFam& q_n,
                       std::span<const gaussian::ExpFam> batch_deltas);

/// Observations of the mixture set plus the sequences of it that form the
/// batch. With batch scope both are the same sequences.
struct Batch {
    SequenceArray mixture;
    std::vector<Eigen::Index> outer;

    static Batch whole(SequenceArray sequences);
};

enum class Form {
    // Posteriors are constants; value is G.
    detached,
    // Posteriors are functions of the parameters through the smoother; value is
    // G + sum_{n,t} [Phi(q_nt) - Phi(eta0)], the interior bound evaluated with
    // the unnormalized auxiliary factors exp((q - eta0)^T t(z)).
    through_posterior,
};

/// The objective on a fresh tape. Without `fixed`, posteriors come from an
/// E-step at the current parameters. `fixed` requires Form::detached.
struct Objective {
    std::unique_ptr<ad::Tape> tape;
    std::vector<ad::Var> recognition_params;
    ad::Var transition;
    ad::Var value;              // quantity to ascend, summed over the batch
    double free_energy = 0.0;   // G summed over the batch
    std::vector<smoother::SmoothedPosterior> posteriors;
};

Objective build_objective(const recognition::RecognitionModel& model, const Matrix& transition, const Batch& batch,
                          kernels::Exec exec, const std::vector<smoother::SmoothedPosterior>* fixed = nullptr,
                          Form form = Form::detached);

struct FreeEnergy {
    double value = 0.0;
    std::vector<smoother::SmoothedPosterior> posteriors;
};

/// Expectation form: sum_n [ sum_t (<log f-delta>_q - log Gamma-tilde) - KL(q || p) ].
FreeEnergy auxiliary_free_energy(const TrainState& state, const Batch& batch,
                                 kernels::Exec exec = kernels::Exec::parallel);

/// Collapsed form sum_n [ log_normalizer_n - sum_t log Gamma-tilde ], built from
/// gaussian-core and the smoother only.
double collapsed_free_energy(const recognition::RecognitionModel& model, const Matrix& transition,
                             const Batch& batch);

/// collapsed_free_energy plus sum_{n,t} [Phi(q_nt) - Phi(eta0)]: the value
/// ascended under Form::through_posterior.
double bound_free_energy(const recognition::RecognitionModel& model, const Matrix& transition,
                         const Batch& batch);

class NumericFailure : public std::runtime_error {
public:
    NumericFailure(long iteration, std::vector<Eigen::Index> batch, const std::string& what);

    long iteration() const { return iteration_; }
    const std::vector<Eigen::Index>& batch() const { return batch_; }

private:
    long iteration_;
    std::vector<Eigen::Index> batch_;
};

/// One E-step and config.m_steps Adam steps on -value / (N T), each followed
/// by singular-value clipping of A. With posterior_gradient every step
/// re-smooths. `objective`, if given, receives G / (N T) before the update.
/// Throws NumericFailure on a non-finite objective or a numerical breakdown.
TrainState em_step(const TrainState& state, const TrainConfig& config, const Batch& batch,
                   double* objective = nullptr);

/// Uniform minibatch of sequence indices for an iteration, without replacement.
std::vector<Eigen::Index> sample_minibatch(std::uint64_t seed, long iteration, Eigen::Index dataset_size,
                                           Eigen::Index batch_size);

struct MetricRow {
    long iteration = 0;
    double objective = 0.0;  // G / (N T) on that iteration's minibatch
    double spectral_norm = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricRow> metrics;
};

/// Runs config.iterations EM steps. metrics[i] is the objective of the state
/// after i steps, so there are iterations + 1 rows.
TrainResult train(const TrainConfig& config, const SequenceArray& observations,
                  const std::function<void(const MetricRow&)>& on_metric = {});

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& metrics);

}  // namespace rpgssm::trainer
