#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "rpgssm/kernels.hpp"
#include "rpgssm/linalg.hpp"

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape is an append-only list of nodes; node ids are topologically ordered
// because every operation appends after its inputs. Vars are lightweight
// handles (tape pointer, node id, shape). Gradients are first order only.

namespace rpgssm::ad {

enum class Op : std::uint8_t {
    leaf,
    matmul,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    transpose,
    tanh,
    softplus,
    reciprocal,
    trace,
    sum,
    row_sum,
    add_row,
    reshape,
    gather_rows,
    logdet_spd,
    cholesky,
    tri_solve,
    quad_form,
    inv_quad_form,
    logsumexp,
    segment_logsumexp,
    row_log_normalizer,
    mixture_lse,
    col_block,
    custom,
};

class Tape;

/// Operation with a hand-written adjoint, for maps that are cheaper to
/// differentiate as a whole than through primitives.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    /// Adjoint of every input, in input order, given the output adjoint.
    virtual std::vector<Matrix> backward(const Matrix& adjoint, std::span<const Matrix* const> inputs,
                                         kernels::Exec exec) const = 0;
};

class Var {
public:
    Var() = default;

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    const Matrix& value() const;
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, int id, Eigen::Index rows, Eigen::Index cols)
        : tape_(tape), id_(id), rows_(rows), cols_(cols) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
    Eigen::Index rows_ = 0;
    Eigen::Index cols_ = 0;
};

class Tape {
public:
    explicit Tape(kernels::Exec exec = kernels::Exec::parallel) : exec_(exec) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that gradients can be requested for.
    Var variable(Matrix value);
    /// Leaf that never receives an adjoint.
    Var constant(Matrix value);

    const Matrix& value(const Var& v) const;
    std::size_t size() const { return nodes_.size(); }
    kernels::Exec exec() const { return exec_; }

    /// d output / d input for each input; inputs not reached get zeros.
    /// Throws std::invalid_argument if output is not 1x1 or a Var belongs to
    /// another tape.
    std::vector<Matrix> gradient(const Var& output, std::span<const Var> inputs) const;

    struct Node {
        Op op = Op::leaf;
        std::vector<int> inputs;
        Matrix value;
        bool needs_grad = false;
        double scalar = 0.0;
        Eigen::Index extent = 0;
        std::vector<Eigen::Index> index;
        std::shared_ptr<const CustomOp> custom;
    };

    Var push(Node node);
    const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    void check_owned(const Var& v, const char* op) const;

private:
    void backprop(int id, const Matrix& adjoint, std::vector<Matrix>& adjoints) const;

    kernels::Exec exec_;
    std::vector<Node> nodes_;
};

// Primitives. All throw std::invalid_argument on shape mismatch.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var transpose(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var reciprocal(const Var& a);
Var trace(const Var& a);
Var sum(const Var& a);
Var row_sum(const Var& a);                   // R x C -> R x 1
Var add_row(const Var& a, const Var& row);   // broadcast a 1 x C row over a's rows
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);  // column-major
Var gather_rows(const Var& a, std::vector<Eigen::Index> rows);
Var col_block(const Var& a, Eigen::Index start, Eigen::Index count);
Var logdet_spd(const Var& a);                // log det of sym(a) via Cholesky
Var cholesky(const Var& a);                  // lower L with L L^T = sym(a)
Var tri_solve(const Var& lower, const Var& b);  // L^-1 b, L lower triangular
Var quad_form(const Var& x, const Var& m);   // x^T m x, x a column
Var inv_quad_form(const Var& x, const Var& j);  // x^T sym(j)^-1 x via Cholesky
Var logsumexp(const Var& a);                 // over all entries -> 1 x 1
Var segment_logsumexp(const Var& a, Eigen::Index segment);  // K x 1 -> K/segment x 1

/// Rowwise Gaussian log-normalizer; see kernels::row_log_normalizer.
Var row_log_normalizer(const Var& H, const Var& Jflat);
/// Mixture term of log Gamma-tilde; see kernels::mixture_lse.
Var mixture_lse(const Var& Hq, const Var& Jq, const Var& Hd, const Var& Jd, const Var& base,
                Eigen::Index steps);

/// Node with the given forward value whose adjoint comes from `op`.
Var custom(std::span<const Var> inputs, Matrix value, std::shared_ptr<const CustomOp> op);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace rpgssm::ad
