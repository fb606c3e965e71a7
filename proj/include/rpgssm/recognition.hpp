#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rpgssm/autodiff.hpp"
#include "rpgssm/gaussian.hpp"

namespace rpgssm::recognition {

enum class Architecture { linear, mlp };
enum class Activation { tanh, softplus };
enum class Covariance { constant_full, constant_diag, data_diag };

struct RecognitionSpec {
    Architecture architecture = Architecture::linear;
    std::vector<Eigen::Index> hidden;  // ignored for linear
    Activation activation = Activation::tanh;
    Covariance covariance = Covariance::constant_full;
    Eigen::Index input_dim = 0;
    Eigen::Index latent_dim = 0;
};

/// Throws std::invalid_argument on an unusable spec.
void validate(const RecognitionSpec& spec);

std::string to_string(Architecture a);
std::string to_string(Activation a);
std::string to_string(Covariance c);
Architecture parse_architecture(const std::string& s);
Activation parse_activation(const std::string& s);
Covariance parse_covariance(const std::string& s);

/// Recognition outputs for a block of K observations, on a tape:
/// H is K x D, Jflat is K x D^2 (column-major flattened precisions).
struct TapeOutput {
    ad::Var H;
    ad::Var Jflat;
};

struct BatchOutput {
    Matrix H;
    Matrix Jflat;
};

class RecognitionModel {
public:
    RecognitionModel() = default;
    RecognitionModel(RecognitionSpec spec, std::vector<std::string> names, std::vector<Matrix> params);

    const RecognitionSpec& spec() const { return spec_; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Matrix>& params() const { return params_; }
    std::vector<Matrix>& mutable_params() { return params_; }

    /// Forward pass over the rows of X (a K x D_X tape value). `params` must be
    /// tape leaves holding this model's parameters, in order.
    TapeOutput forward(ad::Tape& tape, const std::vector<ad::Var>& params, const ad::Var& X) const;

    /// Value-level forward pass over the rows of X. Throws std::invalid_argument
    /// on an input width mismatch and std::domain_error on non-finite output.
    BatchOutput apply_batch(const Matrix& X) const;

    /// eta-delta for a single observation.
    gaussian::ExpFam apply(const Vector& x) const;

    /// Leaves for every parameter on `tape`.
    std::vector<ad::Var> leaves(ad::Tape& tape) const;

private:
    friend RecognitionModel init(const RecognitionSpec& spec, std::uint64_t seed);

    RecognitionSpec spec_;
    std::vector<std::string> names_;
    std::vector<Matrix> params_;
};

/// Weights ~ N(0, 1/fan_in), biases 0, covariance identity. Deterministic per seed.
RecognitionModel init(const RecognitionSpec& spec, std::uint64_t seed);

/// Inverse of softplus at 1, so that a raw parameter at this value gives unit variance.
inline constexpr double kUnitSoftplusInput = 0.54132485461291800;  // log(e - 1)

}  // namespace rpgssm::recognition
