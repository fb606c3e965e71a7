#include "rpgssm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rpgssm/random.hpp"

namespace rpgssm::trainer {

namespace {

using Index = Eigen::Index;

std::string describe_batch(const std::vector<Index>& batch) {
    std::ostringstream s;
    s << '[';
    for (std::size_t i = 0; i < batch.size(); ++i) s << (i ? "," : "") << batch[i];
    s << ']';
    return s.str();
}

std::vector<Index> outer_rows(const Batch& batch) {
    const Index T = batch.mixture.steps;
    std::vector<Index> rows;
    rows.reserve(batch.outer.size() * static_cast<std::size_t>(T));
    for (Index n : batch.outer)
        for (Index t = 0; t < T; ++t) rows.push_back(n * T + t);
    return rows;
}

bool outer_is_identity(const Batch& batch) {
    if (static_cast<Index>(batch.outer.size()) != batch.mixture.sequences) return false;
    for (std::size_t i = 0; i < batch.outer.size(); ++i) {
        if (batch.outer[i] != static_cast<Index>(i)) return false;
    }
    return true;
}

void check_batch(const Batch& batch, Index latent_dim) {
    if (batch.outer.empty()) throw std::invalid_argument("batch: no sequences");
    if (batch.mixture.steps < 1) throw std::invalid_argument("batch: sequences must have at least one step");
    for (Index n : batch.outer) {
        if (n < 0 || n >= batch.mixture.sequences) throw std::invalid_argument("batch: sequence index out of range");
    }
    if (latent_dim < 1) throw std::invalid_argument("batch: latent dimension must be positive");
}

std::vector<smoother::PotentialSequence> potentials_from_rows(const Matrix& H, const Matrix& Jflat, Index sequences,
                                                              Index steps) {
    const Index d = H.cols();
    std::vector<smoother::PotentialSequence> out(static_cast<std::size_t>(sequences));
    for (Index n = 0; n < sequences; ++n) {
        auto& seq = out[static_cast<std::size_t>(n)];
        seq.reserve(static_cast<std::size_t>(steps));
        for (Index t = 0; t < steps; ++t) {
            const Index r = n * steps + t;
            seq.emplace_back(H.row(r).transpose(), linalg::unflatten(Jflat.row(r), d));
        }
    }
    return out;
}

void adam_update(AdamState& adam, std::vector<Matrix*> params, const std::vector<Matrix>& grads,
                 const TrainConfig& config) {
    if (adam.first.size() != params.size()) throw std::logic_error("adam: state does not match parameters");
    ++adam.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& m = adam.first[i];
        Matrix& v = adam.second[i];
        m = config.beta1 * m + (1.0 - config.beta1) * grads[i];
        v = config.beta2 * v + (1.0 - config.beta2) * grads[i].cwiseAbs2();
        params[i]->array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.adam_eps);
    }
}

// Descends -value / scale for the parameters of `obj`.
void gradient_step(TrainState& state, const Objective& obj, const TrainConfig& config, double scale,
                   const std::vector<Index>& batch) {
    std::vector<ad::Var> inputs = obj.recognition_params;
    inputs.push_back(obj.transition);
    std::vector<Matrix> grads = obj.tape->gradient(obj.value, inputs);
    for (auto& g : grads) {
        g *= -1.0 / scale;
        if (!g.allFinite()) throw NumericFailure(state.iteration, batch, "non-finite gradient");
    }
    std::vector<Matrix*> params;
    for (auto& p : state.recognition.mutable_params()) params.push_back(&p);
    params.push_back(&state.transition);
    adam_update(state.adam, params, grads, config);
    state.transition = prior::clip_singular_values(state.transition, config.clip_eps);
    if (!state.transition.allFinite()) throw NumericFailure(state.iteration, batch, "non-finite transition matrix");
}

}  // namespace

void validate(const TrainConfig& c) {
    recognition::validate(c.recognition);
    if (c.batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
        throw std::invalid_argument("learning_rate must be positive");
    }
    if (c.iterations < 0) throw std::invalid_argument("iterations must be non-negative");
    if (c.m_steps < 1) throw std::invalid_argument("m_steps must be at least 1");
    if (!(c.clip_eps > 0.0 && c.clip_eps < 1.0)) throw std::invalid_argument("clip_eps must lie in (0, 1)");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.adam_eps > 0.0)) {
        throw std::invalid_argument("invalid Adam hyperparameters");
    }
}

TrainState init_state(const TrainConfig& config) {
    validate(config);
    const Index d = config.recognition.latent_dim;
    random::Engine rng(random::derive_seed(config.seed, "transition"));
    Matrix A = random::standard_normal(rng, d, d) / std::sqrt(static_cast<double>(d));
    TrainState s;
    s.transition = prior::clip_singular_values(A, 0.05);
    s.recognition = recognition::init(config.recognition, random::derive_seed(config.seed, "recognition-init"));
    for (const auto& p : s.recognition.params()) {
        s.adam.first.push_back(Matrix::Zero(p.rows(), p.cols()));
        s.adam.second.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    s.adam.first.push_back(Matrix::Zero(d, d));
    s.adam.second.push_back(Matrix::Zero(d, d));
    return s;
}

double log_gamma_tilde(const gaussian::ExpFam& eta0, const gaussian::ExpFam& delta_n, const gaussian::ExpFam& q_n,
                       std::span<const gaussian::ExpFam> batch_deltas) {
    if (batch_deltas.empty()) throw std::invalid_argument("log_gamma_tilde: empty batch");
    std::vector<double> terms;
    terms.reserve(batch_deltas.size());
    for (const auto& d : batch_deltas) {
        terms.push_back(gaussian::log_normalizer(q_n + d) - gaussian::log_normalizer(eta0 + d));
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double v : terms) acc += std::exp(v - mx);
    const double out = gaussian::log_normalizer(eta0 + delta_n) - gaussian::log_normalizer(eta0) -
                       gaussian::log_normalizer(delta_n) - std::log(static_cast<double>(batch_deltas.size())) +
                       mx + std::log(acc);
    if (!std::isfinite(out)) throw std::domain_error("log_gamma_tilde: non-finite value");
    return out;
}

Batch Batch::whole(SequenceArray sequences) {
    Batch b;
    b.outer.resize(static_cast<std::size_t>(sequences.sequences));
    std::iota(b.outer.begin(), b.outer.end(), Index{0});
    b.mixture = std::move(sequences);
    return b;
}

Objective build_objective(const recognition::RecognitionModel& model, const Matrix& transition, const Batch& batch,
                          kernels::Exec exec, const std::vector<smoother::SmoothedPosterior>* fixed, Form form) {
    const Index d = model.spec().latent_dim;
    check_batch(batch, d);
    if (transition.rows() != d || transition.cols() != d) {
        throw std::invalid_argument("objective: transition matrix does not match the latent dimension");
    }
    const Index T = batch.mixture.steps;
    const Index M = batch.mixture.sequences;
    const Index N = static_cast<Index>(batch.outer.size());
    const prior::StablePrior prior(transition);

    Objective obj;
    obj.tape = std::make_unique<ad::Tape>(exec);
    ad::Tape& tape = *obj.tape;
    obj.recognition_params = model.leaves(tape);
    obj.transition = tape.variable(transition);
    const recognition::TapeOutput rec = model.forward(tape, obj.recognition_params, tape.constant(batch.mixture.rows));
    if (!rec.H.value().allFinite() || !rec.Jflat.value().allFinite()) {
        throw std::domain_error("recognition: non-finite network output");
    }

    const bool identity = outer_is_identity(batch);
    const std::vector<Index> rows = identity ? std::vector<Index>{} : outer_rows(batch);
    const ad::Var Hd = identity ? rec.H : ad::gather_rows(rec.H, rows);
    const ad::Var Jd = identity ? rec.Jflat : ad::gather_rows(rec.Jflat, rows);

    // E-step.
    if (fixed != nullptr && form != Form::detached) {
        throw std::invalid_argument("objective: fixed posteriors need the detached form");
    }
    if (fixed != nullptr) {
        if (static_cast<Index>(fixed->size()) != N) throw std::invalid_argument("objective: wrong number of posteriors");
        for (const auto& p : *fixed) {
            if (p.steps() != T) throw std::invalid_argument("objective: posterior length does not match the batch");
        }
        obj.posteriors = *fixed;
    } else {
        obj.posteriors = smoother::smooth_batch(prior, potentials_from_rows(Hd.value(), Jd.value(), N, T), exec);
    }

    // Detached posterior statistics.
    const Matrix I = Matrix::Identity(d, d);
    Matrix mean(N * T, d), second(N * T, d * d), Hq(N * T, d), Jq(N * T, d * d);
    Matrix S0 = Matrix::Zero(d, d), S1 = Matrix::Zero(d, d), S10 = Matrix::Zero(d, d);
    double constant = 0.0;
    for (Index n = 0; n < N; ++n) {
        const auto& post = obj.posteriors[static_cast<std::size_t>(n)];
        constant += smoother::chain_entropy(post);
        for (Index t = 0; t < T; ++t) {
            const auto& m = post.marginals[static_cast<std::size_t>(t)];
            const Index r = n * T + t;
            const Matrix mom = m.cov + m.mean * m.mean.transpose();
            const auto llt = linalg::cholesky(m.cov, "posterior marginal covariance");
            const Matrix prec = linalg::symmetrize(llt.solve(I));
            mean.row(r) = m.mean.transpose();
            second.row(r) = linalg::flatten(mom);
            Jq.row(r) = linalg::flatten(prec);
            Hq.row(r) = (prec * m.mean).transpose();
            if (t == 0) constant += -0.5 * static_cast<double>(d) * kLog2Pi - 0.5 * mom.trace();
            if (t + 1 < T) {
                const auto& next = post.marginals[static_cast<std::size_t>(t + 1)];
                S0 += mom;
                S1 += next.cov + next.mean * next.mean.transpose();
                S10 += post.pairwise[static_cast<std::size_t>(t)] + next.mean * m.mean.transpose();
            }
        }
    }

    const double rows_total = static_cast<double>(N * T);
    const double phi0 = 0.5 * static_cast<double>(d) * kLog2Pi;
    const ad::Var eye_row = tape.constant(linalg::flatten(I));
    const ad::Var joint_m = ad::row_log_normalizer(rec.H, ad::add_row(rec.Jflat, eye_row));
    const ad::Var joint_d = identity ? joint_m : ad::gather_rows(joint_m, rows);
    ad::Var q_h = tape.constant(Hq), q_j = tape.constant(Jq);
    ad::Var normalization;
    if (form == Form::through_posterior) {
        const ad::Var natural = smoother::natural_marginals(Hd, Jd, obj.transition, obj.posteriors);
        q_h = ad::col_block(natural, 0, d);
        q_j = ad::col_block(natural, d, d * d);
        normalization = ad::add_scalar(ad::sum(ad::row_log_normalizer(q_h, q_j)), -rows_total * phi0);
    }
    const ad::Var mixture = ad::mixture_lse(q_h, q_j, rec.H, rec.Jflat, joint_m, T);

    // <log f-delta>_q - log Gamma-tilde, summed over (n, t). The Phi(eta-delta)
    // terms of the two cancel and are left out.
    ad::Var g = ad::sum(ad::mul(Hd, tape.constant(mean))) - 0.5 * ad::sum(ad::mul(Jd, tape.constant(second))) -
                ad::sum(joint_d) - ad::sum(mixture);
    g = ad::add_scalar(g, rows_total * (phi0 + std::log(static_cast<double>(M))) + constant);

    // E_q log p(z_{t+1} | z_t), the only place A enters.
    if (T > 1) {
        const double count = static_cast<double>(N * (T - 1));
        const ad::Var& A = obj.transition;
        const ad::Var eye = tape.constant(I);
        const ad::Var S0v = tape.constant(S0), S1v = tape.constant(S1), S10v = tape.constant(S10);
        const ad::Var Q = eye - ad::matmul(A, ad::transpose(A));
        const ad::Var L = ad::cholesky(Q);
        const ad::Var resid = S1v - ad::matmul(A, ad::transpose(S10v)) - ad::matmul(S10v, ad::transpose(A)) +
                              ad::matmul(ad::matmul(A, S0v), ad::transpose(A));
        const ad::Var tr = ad::trace(ad::tri_solve(L, ad::transpose(ad::tri_solve(L, resid))));
        const ad::Var trans = -0.5 * count * ad::logdet_spd(Q) - 0.5 * tr;
        g = ad::add_scalar(g + trans, -0.5 * count * static_cast<double>(d) * kLog2Pi);
    }
    obj.free_energy = g.scalar();
    obj.value = form == Form::through_posterior ? g + normalization : g;
    return obj;
}

FreeEnergy auxiliary_free_energy(const TrainState& state, const Batch& batch, kernels::Exec exec) {
    Objective obj = build_objective(state.recognition, state.transition, batch, exec);
    return {obj.value.scalar(), std::move(obj.posteriors)};
}

double collapsed_free_energy(const recognition::RecognitionModel& model, const Matrix& transition,
                             const Batch& batch) {
    const Index d = model.spec().latent_dim;
    check_batch(batch, d);
    const Index T = batch.mixture.steps;
    const Index M = batch.mixture.sequences;
    const prior::StablePrior prior(transition);
    const recognition::BatchOutput rec = model.apply_batch(batch.mixture.rows);
    const auto deltas = potentials_from_rows(rec.H, rec.Jflat, M, T);
    const gaussian::ExpFam eta0 = gaussian::ExpFam::standard(d);

    double total = 0.0;
    std::vector<gaussian::ExpFam> column(static_cast<std::size_t>(M));
    for (Index n : batch.outer) {
        const auto& seq = deltas[static_cast<std::size_t>(n)];
        const smoother::SmoothedPosterior post = smoother::smooth(prior, seq);
        total += post.log_normalizer;
        for (Index t = 0; t < T; ++t) {
            for (Index m = 0; m < M; ++m) {
                column[static_cast<std::size_t>(m)] = deltas[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)];
            }
            const gaussian::ExpFam q = gaussian::to_natural(post.marginals[static_cast<std::size_t>(t)]);
            total -= log_gamma_tilde(eta0, seq[static_cast<std::size_t>(t)], q, column);
        }
    }
    return total;
}

double bound_free_energy(const recognition::RecognitionModel& model, const Matrix& transition,
                         const Batch& batch) {
    const Index d = model.spec().latent_dim;
    check_batch(batch, d);
    const Index T = batch.mixture.steps;
    const prior::StablePrior prior(transition);
    const recognition::BatchOutput rec = model.apply_batch(batch.mixture.rows);
    const auto deltas = potentials_from_rows(rec.H, rec.Jflat, batch.mixture.sequences, T);
    const double phi0 = gaussian::log_normalizer(gaussian::ExpFam::standard(d));
    double total = collapsed_free_energy(model, transition, batch);
    for (Index n : batch.outer) {
        const auto post = smoother::smooth(prior, deltas[static_cast<std::size_t>(n)]);
        for (const auto& m : post.marginals) total += gaussian::log_normalizer(gaussian::to_natural(m)) - phi0;
    }
    return total;
}

NumericFailure::NumericFailure(long iteration, std::vector<Eigen::Index> batch, const std::string& what)
    : std::runtime_error("numeric failure at iteration " + std::to_string(iteration) + ", batch sequences " +
                         describe_batch(batch) + ": " + what),
      iteration_(iteration),
      batch_(std::move(batch)) {}

TrainState em_step(const TrainState& state, const TrainConfig& config, const Batch& batch, double* objective) {
    const double scale = static_cast<double>(batch.outer.size()) * static_cast<double>(batch.mixture.steps);
    TrainState next = state;
    const Form form = config.posterior_gradient ? Form::through_posterior : Form::detached;
    try {
        Objective obj = build_objective(state.recognition, state.transition, batch, config.exec, nullptr, form);
        const double value = obj.free_energy / scale;
        if (!std::isfinite(value) || !std::isfinite(obj.value.scalar())) {
            throw NumericFailure(state.iteration, batch.outer, "non-finite objective");
        }
        if (objective != nullptr) *objective = value;
        gradient_step(next, obj, config, scale, batch.outer);
        for (int k = 1; k < config.m_steps; ++k) {
            const auto* fixed = config.posterior_gradient ? nullptr : &obj.posteriors;
            const Objective again =
                build_objective(next.recognition, next.transition, batch, config.exec, fixed, form);
            gradient_step(next, again, config, scale, batch.outer);
        }
    } catch (const std::domain_error& e) {
        throw NumericFailure(state.iteration, batch.outer, e.what());
    }
    ++next.iteration;
    return next;
}

std::vector<Index> sample_minibatch(std::uint64_t seed, long iteration, Index dataset_size, Index batch_size) {
    if (dataset_size < 1) throw std::invalid_argument("sample_minibatch: empty dataset");
    const Index k = std::min(batch_size, dataset_size);
    std::vector<Index> idx(static_cast<std::size_t>(dataset_size));
    std::iota(idx.begin(), idx.end(), Index{0});
    random::Engine rng(random::derive_seed(seed, "minibatch", static_cast<std::uint64_t>(iteration)));
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, dataset_size - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

TrainResult train(const TrainConfig& config, const SequenceArray& observations,
                  const std::function<void(const MetricRow&)>& on_metric) {
    validate(config);
    if (observations.sequences < 1 || observations.steps < 1) throw std::invalid_argument("train: empty dataset");
    if (observations.width() != config.recognition.input_dim) {
        throw std::invalid_argument("train: observation width " + std::to_string(observations.width()) +
                                    " does not match input_dim " + std::to_string(config.recognition.input_dim));
    }
    TrainResult result;
    result.state = init_state(config);
    const auto start = std::chrono::steady_clock::now();

    Batch full;
    if (config.mixture_scope == MixtureScope::full) full.mixture = observations;

    for (long it = 0; it <= config.iterations; ++it) {
        const std::vector<Index> idx = sample_minibatch(config.seed, it, observations.sequences, config.batch_size);
        Batch selected;
        Batch* batch = &full;
        if (config.mixture_scope == MixtureScope::full) {
            full.outer = idx;
        } else {
            selected = Batch::whole(observations.select(idx));
            batch = &selected;
        }
        MetricRow row;
        row.iteration = it;
        row.spectral_norm = linalg::spectral_norm(result.state.transition);
        if (it < config.iterations) {
            result.state = em_step(result.state, config, *batch, &row.objective);
        } else {
            try {
                const double scale = static_cast<double>(batch->outer.size() * observations.steps);
                row.objective = auxiliary_free_energy(result.state, *batch, config.exec).value / scale;
            } catch (const std::domain_error& e) {
                throw NumericFailure(it, batch->outer, e.what());
            }
            if (!std::isfinite(row.objective)) throw NumericFailure(it, batch->outer, "non-finite objective");
        }
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        result.metrics.push_back(row);
        if (on_metric) on_metric(row);
    }
    return result;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& metrics) {
    out << "iteration,objective,spectral_norm_A,wall_ms\n";
    out << std::setprecision(17);
    for (const auto& r : metrics) {
        out << r.iteration << ',' << r.objective << ',' << r.spectral_norm << ',' << std::setprecision(6)
            << r.wall_ms << std::setprecision(17) << '\n';
    }
}

}  // namespace rpgssm::trainer
