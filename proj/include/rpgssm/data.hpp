#pragma once

#include <cstdint>

#include <json.hpp>

#include "rpgssm/linalg.hpp"
#include "rpgssm/sequences.hpp"

namespace rpgssm::data {

struct Dataset {
    SequenceArray observations;   // N x T x D_X
    SequenceArray ground_truth;   // N x T x D_G
    nlohmann::json metadata;      // generator name, seed, parameters
};

/// Emission and dynamics of the linear task.
struct LinearSystem {
    Matrix transition;  // 0.95 times a rotation by pi/5 in a random 2-plane
    Matrix emission;    // C
    Vector offset;      // d
    Matrix noise_cov;   // R = 0.3 I
};

/// Throws std::invalid_argument if dz < 2 or dx < 1.
LinearSystem linear_system(Eigen::Index dz, Eigen::Index dx, std::uint64_t seed);

/// z_1 ~ N(0, I), z_t ~ N(B z_{t-1}, I - B B^T), x_t ~ N(C z_t + d, R).
/// Ground truth is the latent trajectory.
Dataset gen_linear(Eigen::Index dz, Eigen::Index dx, Eigen::Index n, Eigen::Index t, std::uint64_t seed);

inline constexpr double kPendulumGravity = 9.81;  // g / L, s^-2
inline constexpr double kPendulumFrameDt = 0.01;
inline constexpr int kPendulumSubsteps = 10;

struct PendulumState {
    double theta = 0.0;
    double omega = 0.0;
};

/// Velocity Verlet over `dt`, split into `substeps` equal steps.
PendulumState pendulum_advance(PendulumState s, double dt, int substeps = kPendulumSubsteps);

/// 1/2 omega^2 + (g/L)(1 - cos theta).
double pendulum_energy(const PendulumState& s);

/// img x img frame (row = y downwards, col = x to the right) of an
/// anti-aliased arm from the centre; theta = 0 points down.
Matrix render_frame(double theta, Eigen::Index img);

/// Flattened frames with N(0, noise_sd^2) pixel noise clipped to [0, 1].
/// Ground truth columns are (sin theta, omega). Throws if img < 8.
Dataset gen_pendulum(Eigen::Index n, Eigen::Index t, std::uint64_t seed, Eigen::Index img = 24,
                     double noise_sd = 0.05);

}  // namespace rpgssm::data
