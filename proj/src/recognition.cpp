#include "rpgssm/recognition.hpp"

#include <cmath>
#include <stdexcept>

#include "rpgssm/random.hpp"

namespace rpgssm::recognition {

namespace {

using Index = Eigen::Index;

Matrix strict_lower_mask(Index d) {
    Matrix m = Matrix::Zero(d, d);
    for (Index j = 0; j < d; ++j)
        for (Index i = j + 1; i < d; ++i) m(i, j) = 1.0;
    return m;
}

// D x D^2 selector: (prec row) * E puts prec_i at flattened position (i, i).
Matrix diagonal_selector(Index d) {
    Matrix e = Matrix::Zero(d, d * d);
    for (Index i = 0; i < d; ++i) e(i, i * d + i) = 1.0;
    return e;
}

ad::Var activate(const ad::Var& x, Activation a) {
    switch (a) {
        case Activation::tanh: return ad::tanh(x);
        case Activation::softplus: return ad::softplus(x);
    }
    throw std::logic_error("activate: unknown activation");
}

}  // namespace

void validate(const RecognitionSpec& spec) {
    if (spec.input_dim < 1) throw std::invalid_argument("recognition: input_dim must be positive");
    if (spec.latent_dim < 1) throw std::invalid_argument("recognition: latent_dim must be positive");
    if (spec.architecture == Architecture::mlp) {
        if (spec.hidden.empty()) throw std::invalid_argument("recognition: mlp needs at least one hidden layer");
        for (Index h : spec.hidden) {
            if (h < 1) throw std::invalid_argument("recognition: hidden width must be positive");
        }
    }
}

std::string to_string(Architecture a) { return a == Architecture::linear ? "linear" : "mlp"; }

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "softplus"; }

std::string to_string(Covariance c) {
    switch (c) {
        case Covariance::constant_full: return "constant-full";
        case Covariance::constant_diag: return "constant-diag";
        case Covariance::data_diag: return "data-diag";
    }
    return "?";
}

Architecture parse_architecture(const std::string& s) {
    if (s == "linear") return Architecture::linear;
    if (s == "mlp") return Architecture::mlp;
    throw std::invalid_argument("unknown architecture '" + s + "' (expected linear or mlp)");
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "softplus") return Activation::softplus;
    throw std::invalid_argument("unknown activation '" + s + "' (expected tanh or softplus)");
}

Covariance parse_covariance(const std::string& s) {
    if (s == "constant-full") return Covariance::constant_full;
    if (s == "constant-diag") return Covariance::constant_diag;
    if (s == "data-diag") return Covariance::data_diag;
    throw std::invalid_argument("unknown covariance '" + s + "' (expected constant-full, constant-diag or data-diag)");
}

RecognitionModel::RecognitionModel(RecognitionSpec spec, std::vector<std::string> names, std::vector<Matrix> params)
    : spec_(std::move(spec)), names_(std::move(names)), params_(std::move(params)) {
    validate(spec_);
    const RecognitionModel reference = init(spec_, 0);
    if (reference.names_ != names_ || params_.size() != names_.size()) {
        throw std::invalid_argument("RecognitionModel: parameter names do not match the spec");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Matrix& want = reference.params_[i];
        if (params_[i].rows() != want.rows() || params_[i].cols() != want.cols()) {
            throw std::invalid_argument("RecognitionModel: parameter '" + names_[i] + "' has shape " +
                                        std::to_string(params_[i].rows()) + "x" + std::to_string(params_[i].cols()) +
                                        ", expected " + std::to_string(want.rows()) + "x" +
                                        std::to_string(want.cols()));
        }
    }
}

RecognitionModel init(const RecognitionSpec& spec, std::uint64_t seed) {
    validate(spec);
    random::Engine rng(random::derive_seed(seed, "recognition"));
    std::vector<std::string> names;
    std::vector<Matrix> params;
    auto dense = [&](const std::string& prefix, Index in, Index out) {
        names.push_back(prefix + ".weight");
        params.push_back(random::standard_normal(rng, in, out) / std::sqrt(static_cast<double>(in)));
        names.push_back(prefix + ".bias");
        params.push_back(Matrix::Zero(1, out));
    };

    Index width = spec.input_dim;
    if (spec.architecture == Architecture::mlp) {
        for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
            dense("hidden" + std::to_string(i), width, spec.hidden[i]);
            width = spec.hidden[i];
        }
    }
    const Index d = spec.latent_dim;
    dense("mean", width, d);

    switch (spec.covariance) {
        case Covariance::constant_full:
            names.push_back("cov.cholesky_raw");
            params.push_back(kUnitSoftplusInput * Matrix::Identity(d, d));
            break;
        case Covariance::constant_diag:
            names.push_back("cov.diag_raw");
            params.push_back(Matrix::Constant(1, d, kUnitSoftplusInput));
            break;
        case Covariance::data_diag:
            names.push_back("var.weight");
            params.push_back(Matrix::Zero(width, d));
            names.push_back("var.bias");
            params.push_back(Matrix::Constant(1, d, kUnitSoftplusInput));
            break;
    }
    RecognitionModel model;
    model.spec_ = spec;
    model.names_ = std::move(names);
    model.params_ = std::move(params);
    return model;
}

std::vector<ad::Var> RecognitionModel::leaves(ad::Tape& tape) const {
    std::vector<ad::Var> out;
    out.reserve(params_.size());
    for (const Matrix& p : params_) out.push_back(tape.variable(p));
    return out;
}

TapeOutput RecognitionModel::forward(ad::Tape& tape, const std::vector<ad::Var>& params, const ad::Var& X) const {
    if (params.size() != params_.size()) throw std::invalid_argument("recognition forward: wrong parameter count");
    if (X.cols() != spec_.input_dim) {
        throw std::invalid_argument("recognition: observation width " + std::to_string(X.cols()) +
                                    " does not match input_dim " + std::to_string(spec_.input_dim));
    }
    const Index d = spec_.latent_dim;
    const Index k = X.rows();
    std::size_t p = 0;
    ad::Var feat = X;
    if (spec_.architecture == Architecture::mlp) {
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i, p += 2) {
            feat = activate(ad::add_row(ad::matmul(feat, params[p]), params[p + 1]), spec_.activation);
        }
    }
    const ad::Var mean = ad::add_row(ad::matmul(feat, params[p]), params[p + 1]);
    p += 2;
    const ad::Var ones = tape.constant(Matrix::Ones(k, 1));

    switch (spec_.covariance) {
        case Covariance::constant_full: {
            const ad::Var raw = params[p];
            const ad::Var eye = tape.constant(Matrix::Identity(d, d));
            const ad::Var chol = ad::mul(raw, tape.constant(strict_lower_mask(d))) +
                                 ad::mul(ad::softplus(ad::mul(raw, eye)), eye);
            const ad::Var chol_inv = ad::tri_solve(chol, eye);
            const ad::Var prec = ad::matmul(ad::transpose(chol_inv), chol_inv);
            return {ad::matmul(mean, prec), ad::matmul(ones, ad::reshape(prec, 1, d * d))};
        }
        case Covariance::constant_diag: {
            const ad::Var prec = ad::reciprocal(ad::softplus(params[p]));
            return {ad::mul(mean, ad::matmul(ones, prec)),
                    ad::matmul(ones, ad::matmul(prec, tape.constant(diagonal_selector(d))))};
        }
        case Covariance::data_diag: {
            const ad::Var var = ad::softplus(ad::add_row(ad::matmul(feat, params[p]), params[p + 1]));
            const ad::Var prec = ad::reciprocal(var);
            return {ad::mul(mean, prec), ad::matmul(prec, tape.constant(diagonal_selector(d)))};
        }
    }
    throw std::logic_error("recognition forward: unknown covariance");
}

BatchOutput RecognitionModel::apply_batch(const Matrix& X) const {
    ad::Tape tape(kernels::Exec::serial);
    std::vector<ad::Var> vars;
    vars.reserve(params_.size());
    for (const Matrix& p : params_) vars.push_back(tape.constant(p));
    const TapeOutput out = forward(tape, vars, tape.constant(X));
    BatchOutput result{out.H.value(), out.Jflat.value()};
    if (!result.H.allFinite() || !result.Jflat.allFinite()) {
        throw std::domain_error("recognition: non-finite network output");
    }
    return result;
}

gaussian::ExpFam RecognitionModel::apply(const Vector& x) const {
    if (x.size() != spec_.input_dim) {
        throw std::invalid_argument("recognition: observation length " + std::to_string(x.size()) +
                                    " does not match input_dim " + std::to_string(spec_.input_dim));
    }
    const BatchOutput out = apply_batch(x.transpose());
    return {out.H.row(0).transpose(), linalg::unflatten(out.Jflat.row(0), spec_.latent_dim)};
}

}  // namespace rpgssm::recognition
