#include "rpgssm/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>

#include <CLI11.hpp>

#include "rpgssm/config.hpp"
#include "rpgssm/errors.hpp"
#include "rpgssm/evaluation.hpp"
#include "rpgssm/model_io.hpp"
#include "rpgssm/random.hpp"
#include "rpgssm/tensor_file.hpp"
#include "rpgssm/trainer.hpp"

namespace rpgssm::cli {

namespace {

using Index = Eigen::Index;
namespace fs = std::filesystem;

void ensure_parent(const fs::path& path) {
    const fs::path parent = path.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

std::ofstream open_output(const fs::path& path) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

std::vector<std::string> target_names(const data::Dataset& ds) {
    std::vector<std::string> names;
    if (ds.metadata.contains("ground_truth") && ds.metadata.at("ground_truth").is_array()) {
        for (const auto& n : ds.metadata.at("ground_truth")) names.push_back(n.get<std::string>());
    }
    for (Index j = static_cast<Index>(names.size()); j < ds.ground_truth.width(); ++j) {
        names.push_back("target" + std::to_string(j));
    }
    return names;
}

void check_model_data(const trainer::TrainState& state, const data::Dataset& ds) {
    const auto& spec = state.recognition.spec();
    if (ds.observations.width() != spec.input_dim) {
        throw ShapeMismatch("data has observation width " + std::to_string(ds.observations.width()) +
                            " but the model expects " + std::to_string(spec.input_dim));
    }
    if (ds.ground_truth.sequences != ds.observations.sequences || ds.ground_truth.steps != ds.observations.steps) {
        throw ShapeMismatch("observation and ground-truth arrays cover different sequences");
    }
}

struct GenerateArgs {
    std::string task;
    Index dz = 4;
    Index dx = 16;
    std::optional<Index> n;
    Index t = 100;
    Index img = 24;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    data::Dataset ds;
    if (a.t < 2) throw UsageError("--t must be at least 2");
    if (a.n && *a.n < 1) throw UsageError("--n must be positive");
    if (a.task == "linear") {
        if (a.dz < 2) throw UsageError("--dz must be at least 2 for the linear task");
        if (a.dx < 1) throw UsageError("--dx must be positive");
        ds = data::gen_linear(a.dz, a.dx, a.n.value_or(200), a.t, a.seed);
    } else if (a.task == "pendulum") {
        if (a.img < 8) throw UsageError("--img must be at least 8");
        ds = data::gen_pendulum(a.n.value_or(500), a.t, a.seed, a.img);
    } else {
        throw UsageError("--task must be linear or pendulum");
    }
    save_dataset(a.out, ds);
    out << "wrote " << a.out << ".obs.rpgt [" << ds.observations.sequences << ',' << ds.observations.steps << ','
        << ds.observations.width() << "]\n";
    return kOk;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::string metrics;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    config::RunConfig rc = config::load(a.config);
    const data::Dataset ds = load_dataset(a.data);
    const std::string generator = ds.metadata.value("generator", std::string());
    if (!generator.empty() && generator != rc.task) {
        throw UsageError("config task '" + rc.task + "' does not match dataset generator '" + generator + "'");
    }
    rc.train.recognition.input_dim = ds.observations.width();

    const long every = std::max<long>(1, rc.train.iterations / 20);
    const auto result = trainer::train(rc.train, ds.observations, [&](const trainer::MetricRow& row) {
        if (row.iteration % every == 0 || row.iteration == rc.train.iterations) {
            err << "iteration " << row.iteration << " objective " << row.objective << " |A|_2 " << row.spectral_norm
                << '\n';
        }
    });

    ensure_parent(a.out);
    model_io::write_file(a.out, result.state);
    std::ofstream metrics = open_output(a.metrics);
    trainer::write_metrics_csv(metrics, result.metrics);
    if (!metrics) throw IoError("failed writing " + a.metrics);
    out << std::setprecision(17) << "final_objective=" << result.metrics.back().objective << '\n';
    return kOk;
}

struct EvalArgs {
    std::string model;
    std::string data;
    std::string out;
    bool oracle = false;
    bool shuffle = false;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const data::Dataset ds = load_dataset(a.data);
    SequenceArray features;
    if (a.oracle) {
        features = ds.ground_truth;
    } else {
        if (a.model.empty()) throw UsageError("--model is required unless --oracle is given");
        const trainer::TrainState state = model_io::read_file(a.model);
        check_model_data(state, ds);
        features = evaluation::posterior_means(evaluation::smooth_all(state.recognition, state.prior(), ds.observations));
    }
    if (a.shuffle) {
        // Null control: permute pooled rows so features carry no information about targets.
        std::vector<Index> perm(static_cast<std::size_t>(features.rows.rows()));
        std::iota(perm.begin(), perm.end(), Index{0});
        random::Engine rng(random::derive_seed(a.seed, "shuffle"));
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix shuffled(features.rows.rows(), features.width());
        for (std::size_t i = 0; i < perm.size(); ++i) shuffled.row(static_cast<Index>(i)) = features.rows.row(perm[i]);
        features.rows = std::move(shuffled);
    }
    const evaluation::RegressionReport rep = evaluation::fit_r2(features, ds.ground_truth, a.seed);
    std::ofstream csv = open_output(a.out);
    evaluation::write_report_csv(csv, rep, target_names(ds));
    if (!csv) throw IoError("failed writing " + a.out);
    if (rep.ridge_fallback) out << "warning: rank-deficient design, ridge 1e-8 applied\n";
    out << std::setprecision(17) << "mean_r2=" << rep.mean_r2 << '\n';
    return kOk;
}

struct RolloutArgs {
    std::string model;
    std::string data;
    Index context = 50;
    Index horizon = 50;
    std::string out;
    std::uint64_t seed = 0;
};

int cmd_rollout(const RolloutArgs& a) {
    if (a.context < 1) throw UsageError("--context must be at least 1");
    if (a.horizon < 0) throw UsageError("--horizon must be non-negative");
    const data::Dataset ds = load_dataset(a.data);
    const trainer::TrainState state = model_io::read_file(a.model);
    check_model_data(state, ds);
    if (a.context + a.horizon > ds.observations.steps) {
        throw ShapeMismatch("context + horizon = " + std::to_string(a.context + a.horizon) +
                            " exceeds the sequence length " + std::to_string(ds.observations.steps));
    }
    const prior::StablePrior prior = state.prior();
    const auto posteriors = evaluation::smooth_all(state.recognition, prior, ds.observations);
    const evaluation::RegressionReport rep =
        evaluation::fit_r2(evaluation::posterior_means(posteriors), ds.ground_truth, a.seed);

    std::ofstream csv = open_output(a.out);
    csv << "seq,t,kind";
    for (const auto& n : target_names(ds)) csv << ',' << n;
    csv << '\n' << std::setprecision(17);
    auto emit = [&](Index n, Index t0, const char* kind, const Matrix& preds) {
        for (Index k = 0; k < preds.rows(); ++k) {
            csv << n << ',' << t0 + k << ',' << kind;
            for (Index j = 0; j < preds.cols(); ++j) csv << ',' << preds(k, j);
            csv << '\n';
        }
    };
    for (Index n = 0; n < ds.observations.sequences; ++n) {
        const Matrix seq = ds.observations.sequence(n);
        const smoother::SmoothedPosterior ctx = a.context == ds.observations.steps
                                                    ? posteriors[static_cast<std::size_t>(n)]
                                                    : evaluation::smooth_all(state.recognition, prior,
                                                                             SequenceArray(1, a.context, seq.topRows(a.context)),
                                                                             kernels::Exec::serial)
                                                          .front();
        Matrix means(a.context, prior.latent_dim());
        for (Index t = 0; t < a.context; ++t) means.row(t) = ctx.marginals[static_cast<std::size_t>(t)].mean.transpose();
        emit(n, 0, "context", rep.predict(means));
        emit(n, a.context, "predicted",
             rep.predict(evaluation::rollout_predict(state.recognition, prior, seq, a.context, a.horizon)));
    }
    if (!csv) throw IoError("failed writing " + a.out);
    return kOk;
}

}  // namespace

void save_dataset(const std::string& prefix, const data::Dataset& ds) {
    ensure_parent(prefix);
    tensor_file::write_file(prefix + ".obs.rpgt", tensor_file::from_sequences(ds.observations));
    tensor_file::write_file(prefix + ".truth.rpgt", tensor_file::from_sequences(ds.ground_truth));
    std::ofstream meta(prefix + ".meta.json", std::ios::trunc);
    if (!meta) throw IoError("cannot open " + prefix + ".meta.json for writing");
    meta << ds.metadata.dump(2) << '\n';
    if (!meta) throw IoError("failed writing " + prefix + ".meta.json");
}

data::Dataset load_dataset(const std::string& prefix) {
    data::Dataset ds;
    try {
        ds.observations = tensor_file::to_sequences(tensor_file::read_file(prefix + ".obs.rpgt"));
        ds.ground_truth = tensor_file::to_sequences(tensor_file::read_file(prefix + ".truth.rpgt"));
    } catch (const ShapeMismatch& e) {
        throw IoError(prefix + ": " + e.what());
    }
    std::ifstream meta(prefix + ".meta.json");
    if (meta) {
        try {
            ds.metadata = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError(prefix + ".meta.json: " + e.what());
        }
    }
    if (ds.ground_truth.sequences != ds.observations.sequences || ds.ground_truth.steps != ds.observations.steps) {
        throw ShapeMismatch(prefix + ": observation and ground-truth arrays cover different sequences");
    }
    return ds;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recognition-parametrized Gaussian state-space models", "rpgssm"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
    g->add_option("--task", gen.task, "linear or pendulum")->required();
    g->add_option("--dz", gen.dz, "latent dimension (linear)");
    g->add_option("--dx", gen.dx, "observation dimension (linear)");
    g->add_option("--n", gen.n, "number of sequences (default 200 linear, 500 pendulum)");
    g->add_option("--t", gen.t, "time steps per sequence");
    g->add_option("--img", gen.img, "frame size in pixels (pendulum)");
    g->add_option("--seed", gen.seed, "master seed");
    g->add_option("--out", gen.out, "output prefix")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Fit a model by EM");
    t->add_option("--config", tr.config, "run config JSON")->required();
    t->add_option("--data", tr.data, "dataset prefix")->required();
    t->add_option("--out", tr.out, "model file")->required();
    t->add_option("--metrics", tr.metrics, "metrics CSV")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Linear-regression R2 from posterior means");
    e->add_option("--model", ev.model, "model file");
    e->add_option("--data", ev.data, "dataset prefix")->required();
    e->add_option("--out", ev.out, "report CSV")->required();
    e->add_flag("--oracle", ev.oracle, "use the ground truth as features");
    e->add_flag("--shuffle", ev.shuffle, "permute feature rows (null control)");
    e->add_option("--seed", ev.seed, "split and shuffle seed");

    RolloutArgs ro;
    auto* r = app.add_subcommand("rollout", "Smooth a context prefix, then predict with the mean dynamics");
    r->add_option("--model", ro.model, "model file")->required();
    r->add_option("--data", ro.data, "dataset prefix")->required();
    r->add_option("--context", ro.context, "context length");
    r->add_option("--horizon", ro.horizon, "prediction horizon");
    r->add_option("--out", ro.out, "output CSV")->required();
    r->add_option("--seed", ro.seed, "regression split seed");

    std::vector<std::string> storage;
    storage.emplace_back("rpgssm");
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (g->parsed()) return cmd_generate(gen, out);
        if (t->parsed()) return cmd_train(tr, out, err);
        if (e->parsed()) return cmd_eval(ev, out);
        if (r->parsed()) return cmd_rollout(ro);
    } catch (const UsageError& x) {
        err << "error: " << x.what() << '\n';
        return kUsage;
    } catch (const IoError& x) {
        err << "I/O error: " << x.what() << '\n';
        return kIo;
    } catch (const trainer::NumericFailure& x) {
        err << "numeric error: " << x.what() << '\n';
        return kNumeric;
    } catch (const std::domain_error& x) {
        err << "numeric error: " << x.what() << '\n';
        return kNumeric;
    } catch (const ShapeMismatch& x) {
        err << "shape mismatch: " << x.what() << '\n';
        return kShape;
    } catch (const std::exception& x) {
        err << "error: " << x.what() << '\n';
        return kInternal;
    }
    return kUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace rpgssm::cli
