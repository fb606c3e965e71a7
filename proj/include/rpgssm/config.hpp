#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "rpgssm/trainer.hpp"

namespace rpgssm::config {

/// Parsed run configuration. `train.recognition.input_dim` is left at 0 and
/// filled from the dataset.
struct RunConfig {
    std::string task;  // linear | pendulum
    trainer::TrainConfig train;
};

/// Validates and converts a config document. Unknown keys, wrong types and
/// out-of-range values throw UsageError naming the key.
///
///   task           "linear" | "pendulum"          (required)
///   latent_dim     integer > 0                     (required)
///   arch           {type: linear|mlp, hidden: [..], activation: tanh|softplus}
///   cov            constant-full | constant-diag | data-diag
///   batch_size     integer >= 2                    (default 32)
///   learning_rate  number > 0                      (default 1e-3)
///   iterations     integer >= 0                    (required)
///   seed           integer >= 0                    (default 0)
///   mixture_scope  batch | full                    (default batch)
///   m_steps        integer > 0                     (default 1)
///   posterior_gradient  bool                       (default true)
RunConfig parse(const nlohmann::json& doc);

RunConfig load(const std::filesystem::path& path);

}  // namespace rpgssm::config
