#pragma once

#include <exception>
#include <mutex>

#include <Eigen/Core>

#include "rpgssm/kernels.hpp"

namespace rpgssm {

// Runs body(i) for i in [0, count), across OpenMP threads when requested.
// The first exception thrown by any iteration is rethrown on the caller.
template <typename Body>
void parallel_for(Eigen::Index count, kernels::Exec exec, Body&& body) {
    std::exception_ptr error;
    std::mutex error_mutex;
    auto guarded = [&](Eigen::Index i) {
        try {
            body(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
        }
    };
    if (exec == kernels::Exec::parallel) {
#pragma omp parallel for schedule(static)
        for (Eigen::Index i = 0; i < count; ++i) guarded(i);
    } else {
        for (Eigen::Index i = 0; i < count; ++i) guarded(i);
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace rpgssm
