#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "rpgssm/linalg.hpp"

namespace rpgssm::random {

using Engine = std::mt19937_64;

/// Derives an independent stream seed from a master seed and a fixed label,
/// so that adding draws to one stream never shifts another.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index);

Matrix standard_normal(Engine& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace rpgssm::random
