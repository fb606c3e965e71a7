#pragma once

#include <stdexcept>

namespace rpgssm {

// Errors with a fixed command-line exit code.

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rpgssm
