#include "rpgssm/sequences.hpp"

#include <stdexcept>
#include <string>

namespace rpgssm {

SequenceArray::SequenceArray(Eigen::Index n, Eigen::Index t, Matrix values)
    : sequences(n), steps(t), rows(std::move(values)) {
    if (n < 0 || t < 0 || rows.rows() != n * t) {
        throw std::invalid_argument("SequenceArray: " + std::to_string(rows.rows()) + " rows cannot hold " +
                                    std::to_string(n) + " sequences of " + std::to_string(t) + " steps");
    }
}

SequenceArray SequenceArray::select(const std::vector<Eigen::Index>& which) const {
    SequenceArray out(static_cast<Eigen::Index>(which.size()), steps, width());
    for (std::size_t i = 0; i < which.size(); ++i) {
        const Eigen::Index n = which[i];
        if (n < 0 || n >= sequences) throw std::out_of_range("SequenceArray::select: sequence index out of range");
        out.sequence(static_cast<Eigen::Index>(i)) = sequence(n);
    }
    return out;
}

}  // namespace rpgssm
