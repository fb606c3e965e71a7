#pragma once

#include <vector>

#include "rpgssm/linalg.hpp"

namespace rpgssm {

/// N x T x D array of sequences, stored as an (N*T) x D matrix with
/// row n*T + t holding step t of sequence n.
struct SequenceArray {
    Eigen::Index sequences = 0;
    Eigen::Index steps = 0;
    Matrix rows;

    SequenceArray() = default;
    SequenceArray(Eigen::Index n, Eigen::Index t, Eigen::Index width)
        : sequences(n), steps(t), rows(Matrix::Zero(n * t, width)) {}
    SequenceArray(Eigen::Index n, Eigen::Index t, Matrix values);

    Eigen::Index width() const { return rows.cols(); }

    /// T x D block of sequence n.
    auto sequence(Eigen::Index n) { return rows.middleRows(n * steps, steps); }
    auto sequence(Eigen::Index n) const { return rows.middleRows(n * steps, steps); }

    /// The listed sequences, in order.
    SequenceArray select(const std::vector<Eigen::Index>& which) const;
};

}  // namespace rpgssm
