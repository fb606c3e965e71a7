#include "rpgssm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "rpgssm/random.hpp"

namespace rpgssm::data {

namespace {

using Index = Eigen::Index;

void require_sizes(Index n, Index t) {
    if (n < 1) throw std::invalid_argument("generator: need at least one sequence");
    if (t < 2) throw std::invalid_argument("generator: need at least two time steps");
}

// Distance from p to the segment [a, b].
double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double s = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    const double dx = px - (ax + s * vx), dy = py - (ay + s * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

LinearSystem linear_system(Index dz, Index dx, std::uint64_t seed) {
    if (dz < 2) throw std::invalid_argument("gen_linear: dz must be at least 2 for a plane rotation");
    if (dx < 1) throw std::invalid_argument("gen_linear: dx must be positive");
    random::Engine rng(random::derive_seed(seed, "system"));

    // Orthonormal u, v spanning a uniformly random 2-plane.
    Vector u = random::standard_normal(rng, dz, 1);
    u.normalize();
    Vector v = random::standard_normal(rng, dz, 1);
    v -= u.dot(v) * u;
    v.normalize();

    const double angle = std::numbers::pi / 5.0;
    const Matrix I = Matrix::Identity(dz, dz);
    const Matrix rot = I + (std::cos(angle) - 1.0) * (u * u.transpose() + v * v.transpose()) +
                       std::sin(angle) * (v * u.transpose() - u * v.transpose());

    LinearSystem sys;
    sys.transition = 0.95 * rot;
    sys.emission = random::standard_normal(rng, dx, dz);
    sys.offset = random::standard_normal(rng, dx, 1);
    sys.noise_cov = 0.3 * Matrix::Identity(dx, dx);
    return sys;
}

Dataset gen_linear(Index dz, Index dx, Index n, Index t, std::uint64_t seed) {
    require_sizes(n, t);
    const LinearSystem sys = linear_system(dz, dx, seed);
    const Matrix I = Matrix::Identity(dz, dz);
    const Matrix trans_chol = linalg::cholesky(I - sys.transition * sys.transition.transpose(), "gen_linear").matrixL();
    const double obs_sd = std::sqrt(0.3);

    Dataset ds;
    ds.observations = SequenceArray(n, t, dx);
    ds.ground_truth = SequenceArray(n, t, dz);
    for (Index s = 0; s < n; ++s) {
        const auto us = static_cast<std::uint64_t>(s);
        random::Engine init_rng(random::derive_seed(seed, "initial", us));
        random::Engine dyn_rng(random::derive_seed(seed, "dynamics", us));
        random::Engine obs_rng(random::derive_seed(seed, "observation", us));
        Vector z = random::standard_normal(init_rng, dz, 1);
        for (Index k = 0; k < t; ++k) {
            if (k > 0) z = sys.transition * z + trans_chol * random::standard_normal(dyn_rng, dz, 1);
            const Vector x = sys.emission * z + sys.offset + obs_sd * Vector(random::standard_normal(obs_rng, dx, 1));
            ds.ground_truth.rows.row(s * t + k) = z.transpose();
            ds.observations.rows.row(s * t + k) = x.transpose();
        }
    }
    ds.metadata = {
        {"generator", "linear"},
        {"seed", seed},
        {"params", {{"dz", dz}, {"dx", dx}, {"n", n}, {"t", t}, {"rotation_angle", std::numbers::pi / 5.0},
                    {"operator_norm", 0.95}, {"obs_noise_var", 0.3}}},
    };
    nlohmann::json names = nlohmann::json::array();
    for (Index i = 0; i < dz; ++i) names.push_back("z" + std::to_string(i));
    ds.metadata["ground_truth"] = names;
    return ds;
}

PendulumState pendulum_advance(PendulumState s, double dt, int substeps) {
    if (substeps < 1) throw std::invalid_argument("pendulum_advance: substeps must be positive");
    const double h = dt / substeps;
    for (int i = 0; i < substeps; ++i) {
        const double half = s.omega - 0.5 * h * kPendulumGravity * std::sin(s.theta);
        s.theta += h * half;
        s.omega = half - 0.5 * h * kPendulumGravity * std::sin(s.theta);
    }
    return s;
}

double pendulum_energy(const PendulumState& s) {
    return 0.5 * s.omega * s.omega + kPendulumGravity * (1.0 - std::cos(s.theta));
}

Matrix render_frame(double theta, Index img) {
    if (img < 8) throw std::invalid_argument("render_frame: image size must be at least 8");
    const double centre = 0.5 * static_cast<double>(img);
    const double length = 0.9 * centre;
    const double half_width = 1.0;
    const double tip_x = centre + length * std::sin(theta);
    const double tip_y = centre + length * std::cos(theta);
    Matrix frame(img, img);
    for (Index row = 0; row < img; ++row) {
        for (Index col = 0; col < img; ++col) {
            const double dist = segment_distance(static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5,
                                                 centre, centre, tip_x, tip_y);
            // One-pixel linear ramp at the edge of the stroke.
            frame(row, col) = std::clamp(half_width + 0.5 - dist, 0.0, 1.0);
        }
    }
    return frame;
}

Dataset gen_pendulum(Index n, Index t, std::uint64_t seed, Index img, double noise_sd) {
    require_sizes(n, t);
    if (img < 8) throw std::invalid_argument("gen_pendulum: img must be at least 8");
    const Index pixels = img * img;
    Dataset ds;
    ds.observations = SequenceArray(n, t, pixels);
    ds.ground_truth = SequenceArray(n, t, 2);
    for (Index s = 0; s < n; ++s) {
        const auto us = static_cast<std::uint64_t>(s);
        random::Engine init_rng(random::derive_seed(seed, "initial", us));
        random::Engine obs_rng(random::derive_seed(seed, "observation", us));
        std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
        std::uniform_real_distribution<double> speed(-4.0, 4.0);
        PendulumState state;
        state.theta = angle(init_rng);
        state.omega = speed(init_rng);
        for (Index k = 0; k < t; ++k) {
            if (k > 0) state = pendulum_advance(state, kPendulumFrameDt);
            const Matrix frame = render_frame(state.theta, img);
            const Matrix noise = noise_sd * random::standard_normal(obs_rng, img, img);
            const Index r = s * t + k;
            for (Index row = 0; row < img; ++row)
                for (Index col = 0; col < img; ++col)
                    ds.observations.rows(r, row * img + col) = std::clamp(frame(row, col) + noise(row, col), 0.0, 1.0);
            ds.ground_truth.rows(r, 0) = std::sin(state.theta);
            ds.ground_truth.rows(r, 1) = state.omega;
        }
    }
    ds.metadata = {
        {"generator", "pendulum"},
        {"seed", seed},
        {"params", {{"n", n}, {"t", t}, {"img", img}, {"noise_sd", noise_sd}, {"gravity_over_length", kPendulumGravity},
                    {"frame_dt", kPendulumFrameDt}, {"substeps", kPendulumSubsteps}}},
        {"ground_truth", nlohmann::json::array({"sin_theta", "omega"})},
    };
    return ds;
}

}  // namespace rpgssm::data
