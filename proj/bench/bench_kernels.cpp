// Timings of the batched kernels: naive reference vs serial vs OpenMP.
//
//   rpgssm_bench [--n N] [--t T] [--d D] [--reps R]

#include <chrono>
#include <cstdio>
#include <functional>

#include <CLI11.hpp>
#include <omp.h>

#include "rpgssm/kernels.hpp"
#include "rpgssm/random.hpp"
#include "rpgssm/smoother.hpp"

using namespace rpgssm;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(int reps, const std::function<void()>& f) {
    f();  // warm-up
    const auto start = Clock::now();
    for (int i = 0; i < reps; ++i) f();
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count() / reps;
}

Matrix random_precisions(random::Engine& rng, Eigen::Index rows, Eigen::Index d, bool shared) {
    Matrix out(rows, d * d);
    Matrix fixed;
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (!shared || r == 0) {
            const Matrix a = random::standard_normal(rng, d, d);
            fixed = a * a.transpose() / static_cast<double>(d) + Matrix::Identity(d, d);
        }
        out.row(r) = linalg::flatten(fixed);
    }
    return out;
}

void report(const char* name, double ref, double serial, double parallel) {
    if (ref > 0.0) {
        std::printf("%-44s %10.3f %10.3f %10.3f %8.2fx\n", name, ref, serial, parallel, serial / parallel);
    } else {
        std::printf("%-44s %10s %10.3f %10.3f %8.2fx\n", name, "-", serial, parallel, serial / parallel);
    }
}

}  // namespace

int main(int argc, char** argv) {
    Eigen::Index n = 32, t = 100, d = 4;
    int reps = 5;
    CLI::App app{"Kernel timings"};
    app.add_option("--n", n, "sequences")->check(CLI::PositiveNumber);
    app.add_option("--t", t, "time steps")->check(CLI::PositiveNumber);
    app.add_option("--d", d, "latent dimension")->check(CLI::PositiveNumber);
    app.add_option("--reps", reps, "timed repetitions")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);
    std::printf("N=%ld T=%ld D=%ld threads=%d\n", static_cast<long>(n), static_cast<long>(t), static_cast<long>(d),
                omp_get_max_threads());
    std::printf("%-44s %10s %10s %10s %9s\n", "kernel (ms/call)", "reference", "serial", "openmp", "speedup");

    random::Engine rng(7);
    const Eigen::Index rows = n * t;
    const Matrix Hq = random::standard_normal(rng, rows, d);
    const Matrix Hd = random::standard_normal(rng, rows, d);
    const Vector base = random::standard_normal(rng, rows, 1);
    const Vector grad = Vector::Ones(rows);

    for (const bool shared : {false, true}) {
        const Matrix Jq = random_precisions(rng, rows, d, shared);
        const Matrix Jd = random_precisions(rng, rows, d, shared);
        const kernels::MixtureInputs in{Hq, Jq, Hd, Jd, base, t};
        const char* tag = shared ? " (shared precisions)" : " (distinct precisions)";

        const double rln_ref = time_ms(reps, [&] { kernels::row_log_normalizer_reference(Hq, Jq); });
        const double rln_s = time_ms(reps, [&] { kernels::row_log_normalizer(Hq, Jq, kernels::Exec::serial); });
        const double rln_p = time_ms(reps, [&] { kernels::row_log_normalizer(Hq, Jq, kernels::Exec::parallel); });
        report((std::string("row_log_normalizer") + tag).c_str(), rln_ref, rln_s, rln_p);

        const double mix_ref = time_ms(1, [&] { kernels::mixture_lse_reference(in); });
        const double mix_s = time_ms(reps, [&] { kernels::mixture_lse(in, kernels::Exec::serial); });
        const double mix_p = time_ms(reps, [&] { kernels::mixture_lse(in, kernels::Exec::parallel); });
        report((std::string("mixture_lse") + tag).c_str(), mix_ref, mix_s, mix_p);

        const double bwd_s = time_ms(reps, [&] { kernels::mixture_lse_backward(in, grad, kernels::Exec::serial); });
        const double bwd_p = time_ms(reps, [&] { kernels::mixture_lse_backward(in, grad, kernels::Exec::parallel); });
        report((std::string("mixture_lse_backward") + tag).c_str(), 0.0, bwd_s, bwd_p);
    }

    Matrix A = random::standard_normal(rng, d, d);
    A *= 0.9 / linalg::spectral_norm(A);
    const prior::StablePrior prior(A);
    std::vector<smoother::PotentialSequence> pots(static_cast<std::size_t>(n));
    for (auto& seq : pots) {
        for (Eigen::Index k = 0; k < t; ++k) {
            seq.emplace_back(Vector(random::standard_normal(rng, d, 1)), Matrix(Matrix::Identity(d, d) * 2.0));
        }
    }
    const double sm_s = time_ms(reps, [&] { smoother::smooth_batch(prior, pots, kernels::Exec::serial); });
    const double sm_p = time_ms(reps, [&] { smoother::smooth_batch(prior, pots, kernels::Exec::parallel); });
    report("smooth_batch", 0.0, sm_s, sm_p);
    return 0;
}
