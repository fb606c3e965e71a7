#include "rpgssm/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rpgssm::ad {

namespace {

using Index = Eigen::Index;

std::string shape_str(Index r, Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

[[noreturn]] void shape_error(const char* op, const Var& a, const Var& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.rows(), a.cols()) +
                                " and " + shape_str(b.rows(), b.cols()));
}

void require_square(const char* op, const Var& a) {
    if (a.rows() != a.cols()) {
        throw std::invalid_argument(std::string(op) + ": expected a square matrix, got " +
                                    shape_str(a.rows(), a.cols()));
    }
}

Tape& same_tape(const char* op, const Var& a) {
    if (a.tape() == nullptr) throw std::invalid_argument(std::string(op) + ": Var is not on a tape");
    return *a.tape();
}

Tape& same_tape(const char* op, const Var& a, const Var& b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
    return *a.tape();
}

Var unary(Op op, const Var& a, Matrix value, double scalar = 0.0) {
    Tape::Node n;
    n.op = op;
    n.inputs = {a.id()};
    n.value = std::move(value);
    n.scalar = scalar;
    return a.tape()->push(std::move(n));
}

Var binary(Op op, const Var& a, const Var& b, Matrix value) {
    Tape::Node n;
    n.op = op;
    n.inputs = {a.id(), b.id()};
    n.value = std::move(value);
    return a.tape()->push(std::move(n));
}

Matrix scalar_matrix(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return m;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_value(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

const Matrix& Var::value() const {
    if (tape_ == nullptr) throw std::invalid_argument("Var::value: Var is not on a tape");
    return tape_->value(*this);
}

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) {
        throw std::invalid_argument("Var::scalar: Var is " + shape_str(v.rows(), v.cols()));
    }
    return v(0, 0);
}

Var Tape::variable(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    const auto& back = nodes_.back();
    return Var(this, static_cast<int>(nodes_.size() - 1), back.value.rows(), back.value.cols());
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    const auto& back = nodes_.back();
    return Var(this, static_cast<int>(nodes_.size() - 1), back.value.rows(), back.value.cols());
}

Var Tape::push(Node node) {
    bool needs = false;
    for (int in : node.inputs) {
        if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
            throw std::logic_error("Tape::push: input id out of range");
        }
        needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
    }
    node.needs_grad = needs;
    nodes_.push_back(std::move(node));
    const auto& back = nodes_.back();
    return Var(this, static_cast<int>(nodes_.size() - 1), back.value.rows(), back.value.cols());
}

const Matrix& Tape::value(const Var& v) const {
    check_owned(v, "Tape::value");
    return nodes_[static_cast<std::size_t>(v.id())].value;
}

void Tape::check_owned(const Var& v, const char* op) const {
    if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
        throw std::invalid_argument(std::string(op) + ": Var is not on this tape");
    }
}

std::vector<Matrix> Tape::gradient(const Var& output, std::span<const Var> inputs) const {
    check_owned(output, "gradient");
    for (const Var& in : inputs) check_owned(in, "gradient");
    if (output.rows() != 1 || output.cols() != 1) {
        throw std::invalid_argument("gradient: output must be 1x1, got " + shape_str(output.rows(), output.cols()));
    }
    std::vector<Matrix> adjoints(static_cast<std::size_t>(output.id()) + 1);
    adjoints.back() = Matrix::Ones(1, 1);
    for (int id = output.id(); id >= 0; --id) {
        Matrix& adj = adjoints[static_cast<std::size_t>(id)];
        if (adj.size() == 0) continue;
        backprop(id, adj, adjoints);
        if (nodes_[static_cast<std::size_t>(id)].op != Op::leaf) adj.resize(0, 0);
    }
    std::vector<Matrix> grads;
    grads.reserve(inputs.size());
    for (const Var& in : inputs) {
        const auto idx = static_cast<std::size_t>(in.id());
        if (idx < adjoints.size() && adjoints[idx].size() != 0) {
            grads.push_back(adjoints[idx]);
        } else {
            grads.push_back(Matrix::Zero(in.rows(), in.cols()));
        }
    }
    return grads;
}

void Tape::backprop(int id, const Matrix& G, std::vector<Matrix>& adjoints) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    auto accumulate = [&](int input, const Matrix& g) {
        const auto idx = static_cast<std::size_t>(input);
        if (!nodes_[idx].needs_grad) return;
        Matrix& dst = adjoints[idx];
        if (dst.size() == 0) {
            dst = g;
        } else {
            dst += g;
        }
    };
    auto in_value = [&](std::size_t k) -> const Matrix& {
        return nodes_[static_cast<std::size_t>(n.inputs[k])].value;
    };
    auto wants = [&](std::size_t k) { return nodes_[static_cast<std::size_t>(n.inputs[k])].needs_grad; };

    switch (n.op) {
        case Op::leaf:
            break;
        case Op::matmul:
            if (wants(0)) accumulate(n.inputs[0], G * in_value(1).transpose());
            if (wants(1)) accumulate(n.inputs[1], in_value(0).transpose() * G);
            break;
        case Op::add:
            accumulate(n.inputs[0], G);
            accumulate(n.inputs[1], G);
            break;
        case Op::sub:
            accumulate(n.inputs[0], G);
            if (wants(1)) accumulate(n.inputs[1], -G);
            break;
        case Op::mul:
            if (wants(0)) accumulate(n.inputs[0], G.cwiseProduct(in_value(1)));
            if (wants(1)) accumulate(n.inputs[1], G.cwiseProduct(in_value(0)));
            break;
        case Op::scale:
            accumulate(n.inputs[0], n.scalar * G);
            break;
        case Op::add_scalar:
            accumulate(n.inputs[0], G);
            break;
        case Op::transpose:
            accumulate(n.inputs[0], G.transpose());
            break;
        case Op::tanh:
            accumulate(n.inputs[0], G.cwiseProduct((1.0 - n.value.array().square()).matrix()));
            break;
        case Op::softplus:
            accumulate(n.inputs[0], G.cwiseProduct(in_value(0).unaryExpr([](double x) { return sigmoid(x); })));
            break;
        case Op::reciprocal:
            accumulate(n.inputs[0], -G.cwiseProduct(n.value.cwiseAbs2()));
            break;
        case Op::trace: {
            const Index d = in_value(0).rows();
            accumulate(n.inputs[0], G(0, 0) * Matrix::Identity(d, d));
            break;
        }
        case Op::sum: {
            const Matrix& a = in_value(0);
            accumulate(n.inputs[0], Matrix::Constant(a.rows(), a.cols(), G(0, 0)));
            break;
        }
        case Op::row_sum:
            accumulate(n.inputs[0], G.replicate(1, in_value(0).cols()));
            break;
        case Op::add_row:
            accumulate(n.inputs[0], G);
            if (wants(1)) accumulate(n.inputs[1], G.colwise().sum());
            break;
        case Op::reshape: {
            const Matrix& a = in_value(0);
            accumulate(n.inputs[0], Eigen::Map<const Matrix>(G.data(), a.rows(), a.cols()));
            break;
        }
        case Op::gather_rows: {
            const Matrix& a = in_value(0);
            Matrix d = Matrix::Zero(a.rows(), a.cols());
            for (std::size_t i = 0; i < n.index.size(); ++i) d.row(n.index[i]) += G.row(static_cast<Index>(i));
            accumulate(n.inputs[0], d);
            break;
        }
        case Op::logdet_spd: {
            const Matrix s = linalg::symmetrize(in_value(0));
            const auto llt = linalg::cholesky(s, "logdet_spd backward");
            const Matrix inv = linalg::symmetrize(llt.solve(Matrix::Identity(s.rows(), s.cols())));
            accumulate(n.inputs[0], G(0, 0) * inv);
            break;
        }
        case Op::cholesky: {
            const Matrix& L = n.value;
            Matrix P = (L.transpose() * G).triangularView<Eigen::Lower>();
            P.diagonal() *= 0.5;
            const auto Lt = L.transpose().triangularView<Eigen::Upper>();
            const Matrix X = Lt.solve(P);                          // L^-T P
            const Matrix S = Lt.solve(X.transpose()).transpose();  // L^-T P L^-1
            accumulate(n.inputs[0], linalg::symmetrize(S));
            break;
        }
        case Op::tri_solve: {
            const Matrix& L = in_value(0);
            const Matrix& X = n.value;
            const Matrix dB = L.triangularView<Eigen::Lower>().transpose().solve(G);
            if (wants(1)) accumulate(n.inputs[1], dB);
            if (wants(0)) {
                Matrix dL = (-dB * X.transpose()).triangularView<Eigen::Lower>();
                accumulate(n.inputs[0], dL);
            }
            break;
        }
        case Op::quad_form: {
            const Matrix& x = in_value(0);
            const Matrix& m = in_value(1);
            const double g = G(0, 0);
            if (wants(0)) accumulate(n.inputs[0], g * (m + m.transpose()) * x);
            if (wants(1)) accumulate(n.inputs[1], g * x * x.transpose());
            break;
        }
        case Op::inv_quad_form: {
            const Matrix& x = in_value(0);
            const Matrix s = linalg::symmetrize(in_value(1));
            const auto llt = linalg::cholesky(s, "inv_quad_form backward");
            const Matrix v = llt.solve(x);
            const double g = G(0, 0);
            if (wants(0)) accumulate(n.inputs[0], 2.0 * g * v);
            if (wants(1)) accumulate(n.inputs[1], -g * v * v.transpose());
            break;
        }
        case Op::logsumexp: {
            const Matrix& a = in_value(0);
            const double lse = n.value(0, 0);
            accumulate(n.inputs[0], G(0, 0) * (a.array() - lse).exp().matrix());
            break;
        }
        case Op::segment_logsumexp: {
            const Matrix& a = in_value(0);
            Matrix d(a.rows(), 1);
            for (Index i = 0; i < a.rows(); ++i) {
                const Index s = i / n.extent;
                d(i, 0) = G(s, 0) * std::exp(a(i, 0) - n.value(s, 0));
            }
            accumulate(n.inputs[0], d);
            break;
        }
        case Op::row_log_normalizer: {
            const Vector g = G.col(0);
            auto grads = kernels::row_log_normalizer_backward(in_value(0), in_value(1), g, exec_);
            accumulate(n.inputs[0], grads.dH);
            accumulate(n.inputs[1], grads.dJ);
            break;
        }
        case Op::col_block: {
            Matrix d = Matrix::Zero(in_value(0).rows(), in_value(0).cols());
            d.middleCols(n.extent, G.cols()) = G;
            accumulate(n.inputs[0], d);
            break;
        }
        case Op::custom: {
            std::vector<const Matrix*> values;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) values.push_back(&in_value(k));
            const std::vector<Matrix> grads = n.custom->backward(G, values, exec_);
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                if (wants(k)) accumulate(n.inputs[k], grads[k]);
            }
            break;
        }
        case Op::mixture_lse: {
            const Vector base = in_value(4).col(0);
            const kernels::MixtureInputs in{in_value(0), in_value(1), in_value(2), in_value(3), base, n.extent};
            const Vector g = G.col(0);
            auto grads = kernels::mixture_lse_backward(in, g, exec_);
            accumulate(n.inputs[0], grads.dHq);
            accumulate(n.inputs[1], grads.dJq);
            accumulate(n.inputs[2], grads.dHd);
            accumulate(n.inputs[3], grads.dJd);
            accumulate(n.inputs[4], grads.dbase);
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b) {
    same_tape("matmul", a, b);
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    return binary(Op::matmul, a, b, a.value() * b.value());
}

Var add(const Var& a, const Var& b) {
    same_tape("add", a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
    return binary(Op::add, a, b, a.value() + b.value());
}

Var sub(const Var& a, const Var& b) {
    same_tape("sub", a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
    return binary(Op::sub, a, b, a.value() - b.value());
}

Var mul(const Var& a, const Var& b) {
    same_tape("mul", a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
    return binary(Op::mul, a, b, a.value().cwiseProduct(b.value()));
}

Var scale(const Var& a, double s) {
    same_tape("scale", a);
    return unary(Op::scale, a, s * a.value(), s);
}

Var add_scalar(const Var& a, double s) {
    same_tape("add_scalar", a);
    return unary(Op::add_scalar, a, (a.value().array() + s).matrix(), s);
}

Var transpose(const Var& a) {
    same_tape("transpose", a);
    return unary(Op::transpose, a, a.value().transpose());
}

Var tanh(const Var& a) {
    same_tape("tanh", a);
    return unary(Op::tanh, a, a.value().array().tanh().matrix());
}

Var softplus(const Var& a) {
    same_tape("softplus", a);
    return unary(Op::softplus, a, a.value().unaryExpr([](double x) { return softplus_value(x); }));
}

Var reciprocal(const Var& a) {
    same_tape("reciprocal", a);
    return unary(Op::reciprocal, a, a.value().cwiseInverse());
}

Var trace(const Var& a) {
    same_tape("trace", a);
    require_square("trace", a);
    return unary(Op::trace, a, scalar_matrix(a.value().trace()));
}

Var sum(const Var& a) {
    same_tape("sum", a);
    return unary(Op::sum, a, scalar_matrix(a.value().sum()));
}

Var row_sum(const Var& a) {
    same_tape("row_sum", a);
    return unary(Op::row_sum, a, a.value().rowwise().sum());
}

Var add_row(const Var& a, const Var& row) {
    same_tape("add_row", a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
    Matrix v = a.value();
    v.rowwise() += row.value().row(0);
    return binary(Op::add_row, a, row, std::move(v));
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    same_tape("reshape", a);
    if (rows * cols != a.rows() * a.cols()) {
        throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.rows(), a.cols()) + " to " +
                                    shape_str(rows, cols));
    }
    return unary(Op::reshape, a, Eigen::Map<const Matrix>(a.value().data(), rows, cols));
}

Var gather_rows(const Var& a, std::vector<Eigen::Index> rows) {
    same_tape("gather_rows", a);
    const Matrix& v = a.value();
    Matrix out(static_cast<Index>(rows.size()), v.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= v.rows()) throw std::invalid_argument("gather_rows: row index out of range");
        out.row(static_cast<Index>(i)) = v.row(rows[i]);
    }
    Tape::Node n;
    n.op = Op::gather_rows;
    n.inputs = {a.id()};
    n.value = std::move(out);
    n.index = std::move(rows);
    return a.tape()->push(std::move(n));
}

Var logdet_spd(const Var& a) {
    same_tape("logdet_spd", a);
    require_square("logdet_spd", a);
    const auto llt = linalg::cholesky(linalg::symmetrize(a.value()), "logdet_spd");
    return unary(Op::logdet_spd, a, scalar_matrix(linalg::logdet_from_cholesky(llt)));
}

Var cholesky(const Var& a) {
    same_tape("cholesky", a);
    require_square("cholesky", a);
    const auto llt = linalg::cholesky(linalg::symmetrize(a.value()), "cholesky");
    return unary(Op::cholesky, a, Matrix(llt.matrixL()));
}

Var tri_solve(const Var& lower, const Var& b) {
    same_tape("tri_solve", lower, b);
    require_square("tri_solve", lower);
    if (lower.cols() != b.rows()) shape_error("tri_solve", lower, b);
    const Matrix& L = lower.value();
    if (!(L.diagonal().array() != 0.0).all()) throw std::domain_error("tri_solve: singular triangular matrix");
    return binary(Op::tri_solve, lower, b, L.triangularView<Eigen::Lower>().solve(b.value()));
}

Var quad_form(const Var& x, const Var& m) {
    same_tape("quad_form", x, m);
    require_square("quad_form", m);
    if (x.cols() != 1 || x.rows() != m.rows()) shape_error("quad_form", x, m);
    const Matrix& xv = x.value();
    return binary(Op::quad_form, x, m, scalar_matrix((xv.transpose() * m.value() * xv)(0, 0)));
}

Var inv_quad_form(const Var& x, const Var& j) {
    same_tape("inv_quad_form", x, j);
    require_square("inv_quad_form", j);
    if (x.cols() != 1 || x.rows() != j.rows()) shape_error("inv_quad_form", x, j);
    const auto llt = linalg::cholesky(linalg::symmetrize(j.value()), "inv_quad_form");
    const Matrix& xv = x.value();
    return binary(Op::inv_quad_form, x, j, scalar_matrix(xv.col(0).dot(llt.solve(xv).col(0))));
}

Var logsumexp(const Var& a) {
    same_tape("logsumexp", a);
    if (a.value().size() == 0) throw std::invalid_argument("logsumexp: empty input");
    const double mx = a.value().maxCoeff();
    const double v = mx + std::log((a.value().array() - mx).exp().sum());
    return unary(Op::logsumexp, a, scalar_matrix(v));
}

Var segment_logsumexp(const Var& a, Eigen::Index segment) {
    same_tape("segment_logsumexp", a);
    if (a.cols() != 1 || segment <= 0 || a.rows() % segment != 0) {
        throw std::invalid_argument("segment_logsumexp: expected a K x 1 column with K divisible by the segment");
    }
    const Matrix& v = a.value();
    const Index groups = a.rows() / segment;
    Matrix out(groups, 1);
    for (Index s = 0; s < groups; ++s) {
        const auto seg = v.col(0).segment(s * segment, segment);
        const double mx = seg.maxCoeff();
        out(s, 0) = mx + std::log((seg.array() - mx).exp().sum());
    }
    Tape::Node n;
    n.op = Op::segment_logsumexp;
    n.inputs = {a.id()};
    n.value = std::move(out);
    n.extent = segment;
    return a.tape()->push(std::move(n));
}

Var row_log_normalizer(const Var& H, const Var& Jflat) {
    Tape& tape = same_tape("row_log_normalizer", H, Jflat);
    if (H.rows() != Jflat.rows() || H.cols() * H.cols() != Jflat.cols()) shape_error("row_log_normalizer", H, Jflat);
    Matrix out = kernels::row_log_normalizer(H.value(), Jflat.value(), tape.exec());
    return binary(Op::row_log_normalizer, H, Jflat, std::move(out));
}

Var mixture_lse(const Var& Hq, const Var& Jq, const Var& Hd, const Var& Jd, const Var& base,
                Eigen::Index steps) {
    Tape& tape = same_tape("mixture_lse", Hq, Jq);
    same_tape("mixture_lse", Hq, Hd);
    same_tape("mixture_lse", Hq, Jd);
    same_tape("mixture_lse", Hq, base);
    if (base.cols() != 1) throw std::invalid_argument("mixture_lse: base must be a column");
    const Vector base_v = base.value().col(0);
    const kernels::MixtureInputs in{Hq.value(), Jq.value(), Hd.value(), Jd.value(), base_v, steps};
    Matrix out = kernels::mixture_lse(in, tape.exec());
    Tape::Node n;
    n.op = Op::mixture_lse;
    n.inputs = {Hq.id(), Jq.id(), Hd.id(), Jd.id(), base.id()};
    n.value = std::move(out);
    n.extent = steps;
    return tape.push(std::move(n));
}

Var col_block(const Var& a, Eigen::Index start, Eigen::Index count) {
    same_tape("col_block", a);
    if (start < 0 || count < 1 || start + count > a.cols()) {
        throw std::invalid_argument("col_block: columns [" + std::to_string(start) + ", " +
                                    std::to_string(start + count) + ") outside " + shape_str(a.rows(), a.cols()));
    }
    Tape::Node n;
    n.op = Op::col_block;
    n.inputs = {a.id()};
    n.value = a.value().middleCols(start, count);
    n.extent = start;
    return a.tape()->push(std::move(n));
}

Var custom(std::span<const Var> inputs, Matrix value, std::shared_ptr<const CustomOp> op) {
    if (inputs.empty() || !op) throw std::invalid_argument("custom: need inputs and an adjoint");
    Tape::Node n;
    n.op = Op::custom;
    for (const Var& v : inputs) {
        same_tape("custom", inputs.front(), v);
        n.inputs.push_back(v.id());
    }
    n.value = std::move(value);
    n.custom = std::move(op);
    return inputs.front().tape()->push(std::move(n));
}

}  // namespace rpgssm::ad
