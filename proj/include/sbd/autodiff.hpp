#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbd/tensor.hpp"

namespace sbd {

// Reverse-mode differentiation on an eagerly evaluated tape of dense
// tensors. Two gradient paths are provided:
//
//   * Tape::backward      — numeric accumulation into per-node buffers,
//                           in fixed reverse order of node creation.
//   * Tape::grad_nodes    — emits the gradient computation as new tape
//                           nodes, so gradients themselves stay
//                           differentiable (used to unroll inner training
//                           steps inside an outer objective).
//
// Single-threaded per tape. Tensors detached from any tape are immutable
// values and safe to share.

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,       // elementwise, same shape
    SMul,      // scalar node times matrix node
    Affine,    // c0 * x + c1, c0/c1 fixed doubles
    MatMul,
    Transpose,
    Sigmoid,
    Relu,
    Log,
    Exp,
    Square,
    Sqrt,
    Rsqrt0,    // x > 0 ? x^(-1/2) : 0  (isolated-node Laplacian convention)
    Reciprocal,
    Sum,       // all entries -> 1x1
    RowSum,    // nxm -> nx1
    AddRowVec, // nxm + broadcast 1xm
    ScaleRows, // row i of X times s[i]
    TracePow3, // Tr(A^3)
};

class Tape;

/// Lightweight handle to a tape node.
class Value {
public:
    Value() = default;
    Value(Tape* tape, std::int32_t idx) : tape_(tape), idx_(idx) {}

    const Tensor& val() const;
    double item() const { return val().item(); }
    int rows() const { return val().rows(); }
    int cols() const { return val().cols(); }
    Tape* tape() const { return tape_; }
    std::int32_t index() const { return idx_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::int32_t idx_ = -1;
};

struct Node {
    Op op = Op::Leaf;
    std::int32_t a = -1, b = -1;
    double c0 = 0.0, c1 = 0.0;
    Tensor value;
};

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

class Tape {
public:
    Value leaf(Tensor t) { return push(Op::Leaf, -1, -1, std::move(t)); }
    Value constant(Tensor t) { return leaf(std::move(t)); }
    Value scalar(double v) { return leaf(Tensor::scalar(v)); }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::int32_t i) const { return nodes_[i]; }

    Value push(Op op, std::int32_t a, std::int32_t b, Tensor value, double c0 = 0.0,
               double c1 = 0.0) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.c0 = c0;
        n.c1 = c1;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Value(this, static_cast<std::int32_t>(nodes_.size() - 1));
    }

    /// Numeric reverse pass from a scalar root. Gradients accumulate in
    /// fixed reverse creation order; repeating the call recomputes the same
    /// gradients from scratch.
    void backward(Value root) {
        if (root.tape() != this) throw std::invalid_argument("backward: foreign value");
        if (!nodes_[root.index()].value.is_scalar())
            throw std::invalid_argument("backward: root must be a scalar");
        grads_.assign(nodes_.size(), Tensor());
        grads_[root.index()] = Tensor::scalar(1.0);
        for (std::int32_t i = root.index(); i >= 0; --i) {
            if (grads_[i].empty()) continue;
            propagate(i, grads_[i]);
        }
    }

    /// Gradient of the last backward() w.r.t. a node; zeros if the node was
    /// not reached.
    Tensor grad(Value v) const {
        if (v.tape() != this) throw std::invalid_argument("grad: foreign value");
        if (static_cast<std::size_t>(v.index()) < grads_.size() && !grads_[v.index()].empty())
            return grads_[v.index()];
        const Tensor& val = nodes_[v.index()].value;
        return Tensor(val.rows(), val.cols());
    }

    /// Build gradient nodes of a scalar root w.r.t. each entry of `wrt`.
    /// The emitted nodes are ordinary tape values and remain differentiable.
    std::vector<Value> grad_nodes(Value root, std::span<const Value> wrt);

private:
    void propagate(std::int32_t i, const Tensor& g);

    void accum(std::int32_t idx, const Tensor& contribution) {
        if (grads_[idx].empty()) {
            grads_[idx] = contribution;
        } else {
            for (std::size_t k = 0; k < contribution.size(); ++k)
                grads_[idx][k] += contribution[k];
        }
    }

    friend class Value;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

inline const Tensor& Value::val() const { return tape_->node(idx_).value; }

// ---- op constructors ----

namespace detail {
inline const Tensor& v(const Value& x) { return x.val(); }
inline void same_tape(const Value& a, const Value& b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("op: values from different tapes");
}
} // namespace detail

inline Value add(Value a, Value b) {
    detail::same_tape(a, b);
    return a.tape()->push(Op::Add, a.index(), b.index(), detail::v(a) + detail::v(b));
}

inline Value sub(Value a, Value b) {
    detail::same_tape(a, b);
    return a.tape()->push(Op::Sub, a.index(), b.index(), detail::v(a) - detail::v(b));
}

inline Value mul(Value a, Value b) {
    detail::same_tape(a, b);
    return a.tape()->push(Op::Mul, a.index(), b.index(), hadamard(detail::v(a), detail::v(b)));
}

/// Scalar node times matrix node.
inline Value smul(Value s, Value x) {
    detail::same_tape(s, x);
    if (!detail::v(s).is_scalar()) throw std::invalid_argument("smul: first operand must be 1x1");
    return s.tape()->push(Op::SMul, s.index(), x.index(), scaled(detail::v(x), detail::v(s).item()));
}

/// c0 * x + c1 with fixed coefficients.
inline Value affine(Value x, double c0, double c1) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = c0 * r[k] + c1;
    return x.tape()->push(Op::Affine, x.index(), -1, std::move(r), c0, c1);
}

inline Value neg(Value x) { return affine(x, -1.0, 0.0); }

inline Value matmul(Value a, Value b) {
    detail::same_tape(a, b);
    return a.tape()->push(Op::MatMul, a.index(), b.index(),
                          matmul_plain(detail::v(a), detail::v(b)));
}

inline Value transpose(Value a) {
    return a.tape()->push(Op::Transpose, a.index(), -1, transpose_plain(detail::v(a)));
}

inline Value sigmoid(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = stable_sigmoid(r[k]);
    return x.tape()->push(Op::Sigmoid, x.index(), -1, std::move(r));
}

inline Value relu(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = r[k] > 0.0 ? r[k] : 0.0;
    return x.tape()->push(Op::Relu, x.index(), -1, std::move(r));
}

inline Value log(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] <= 0.0) throw std::domain_error("log: non-positive entry");
        r[k] = std::log(r[k]);
    }
    return x.tape()->push(Op::Log, x.index(), -1, std::move(r));
}

inline Value exp(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(r[k]);
    return x.tape()->push(Op::Exp, x.index(), -1, std::move(r));
}

inline Value square(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = r[k] * r[k];
    return x.tape()->push(Op::Square, x.index(), -1, std::move(r));
}

inline Value sqrt(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::sqrt(r[k]);
    return x.tape()->push(Op::Sqrt, x.index(), -1, std::move(r));
}

/// Elementwise x > 0 ? 1/sqrt(x) : 0. The zero branch realizes the
/// isolated-node convention of the normalized Laplacian.
inline Value rsqrt0(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = r[k] > 0.0 ? 1.0 / std::sqrt(r[k]) : 0.0;
    return x.tape()->push(Op::Rsqrt0, x.index(), -1, std::move(r));
}

inline Value reciprocal(Value x) {
    Tensor r = detail::v(x);
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (r[k] == 0.0) throw std::domain_error("reciprocal: zero entry");
        r[k] = 1.0 / r[k];
    }
    return x.tape()->push(Op::Reciprocal, x.index(), -1, std::move(r));
}

inline Value sum(Value x) {
    return x.tape()->push(Op::Sum, x.index(), -1, Tensor::scalar(sum_all(detail::v(x))));
}

inline Value row_sum(Value x) {
    const Tensor& t = detail::v(x);
    Tensor r(t.rows(), 1);
    for (int i = 0; i < t.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < t.cols(); ++j) s += t(i, j);
        r(i, 0) = s;
    }
    return x.tape()->push(Op::RowSum, x.index(), -1, std::move(r));
}

/// Add a 1xm row vector to every row of an nxm matrix.
inline Value add_rowvec(Value x, Value rowvec) {
    detail::same_tape(x, rowvec);
    const Tensor& t = detail::v(x);
    const Tensor& rv = detail::v(rowvec);
    if (rv.rows() != 1 || rv.cols() != t.cols())
        throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(t.cols()) +
                                    ", got " + rv.shape_str());
    Tensor r = t;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) += rv(0, j);
    return x.tape()->push(Op::AddRowVec, x.index(), rowvec.index(), std::move(r));
}

/// Multiply row i of X by s(i, 0).
inline Value scale_rows(Value x, Value s) {
    detail::same_tape(x, s);
    const Tensor& t = detail::v(x);
    const Tensor& sv = detail::v(s);
    if (sv.cols() != 1 || sv.rows() != t.rows())
        throw std::invalid_argument("scale_rows: scale must be " + std::to_string(t.rows()) +
                                    "x1, got " + sv.shape_str());
    Tensor r = t;
    for (int i = 0; i < r.rows(); ++i)
        for (int j = 0; j < r.cols(); ++j) r(i, j) *= sv(i, 0);
    return x.tape()->push(Op::ScaleRows, x.index(), s.index(), std::move(r));
}

/// Tr(A^3); gradient is 3*(A^2)^T.
inline Value trace_pow3(Value a) {
    const Tensor& t = detail::v(a);
    if (t.rows() != t.cols()) throw std::invalid_argument("trace_pow3: matrix must be square");
    Tensor sq = matmul_plain(t, t);
    double tr = 0.0;
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) tr += sq(i, j) * t(j, i);
    return a.tape()->push(Op::TracePow3, a.index(), -1, Tensor::scalar(tr));
}

// ---- numeric backward rules ----

inline void Tape::propagate(std::int32_t i, const Tensor& g) {
    Node& n = nodes_[i];
    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::Add:
        accum(n.a, g);
        accum(n.b, g);
        break;
    case Op::Sub:
        accum(n.a, g);
        accum(n.b, scaled(g, -1.0));
        break;
    case Op::Mul:
        accum(n.a, hadamard(g, nodes_[n.b].value));
        accum(n.b, hadamard(g, nodes_[n.a].value));
        break;
    case Op::SMul: {
        double dot = 0.0;
        const Tensor& x = nodes_[n.b].value;
        for (std::size_t k = 0; k < g.size(); ++k) dot += g[k] * x[k];
        accum(n.a, Tensor::scalar(dot));
        accum(n.b, scaled(g, nodes_[n.a].value.item()));
        break;
    }
    case Op::Affine:
        accum(n.a, scaled(g, n.c0));
        break;
    case Op::MatMul:
        accum(n.a, matmul_plain(g, transpose_plain(nodes_[n.b].value)));
        accum(n.b, matmul_plain(transpose_plain(nodes_[n.a].value), g));
        break;
    case Op::Transpose:
        accum(n.a, transpose_plain(g));
        break;
    case Op::Sigmoid: {
        Tensor d = n.value;
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = g[k] * d[k] * (1.0 - d[k]);
        accum(n.a, d);
        break;
    }
    case Op::Relu: {
        const Tensor& x = nodes_[n.a].value;
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k)
            if (x[k] <= 0.0) d[k] = 0.0;
        accum(n.a, d);
        break;
    }
    case Op::Log: {
        const Tensor& x = nodes_[n.a].value;
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k) d[k] /= x[k];
        accum(n.a, d);
        break;
    }
    case Op::Exp: {
        Tensor d = hadamard(g, n.value);
        accum(n.a, d);
        break;
    }
    case Op::Square: {
        const Tensor& x = nodes_[n.a].value;
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 2.0 * x[k];
        accum(n.a, d);
        break;
    }
    case Op::Sqrt: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 0.5 / n.value[k];
        accum(n.a, d);
        break;
    }
    case Op::Rsqrt0: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k) {
            double y = n.value[k];
            d[k] *= -0.5 * y * y * y;
        }
        accum(n.a, d);
        break;
    }
    case Op::Reciprocal: {
        Tensor d = g;
        for (std::size_t k = 0; k < d.size(); ++k) d[k] *= -n.value[k] * n.value[k];
        accum(n.a, d);
        break;
    }
    case Op::Sum: {
        const Tensor& x = nodes_[n.a].value;
        accum(n.a, Tensor(x.rows(), x.cols(), g.item()));
        break;
    }
    case Op::RowSum: {
        const Tensor& x = nodes_[n.a].value;
        Tensor d(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) d(r, c) = g(r, 0);
        accum(n.a, d);
        break;
    }
    case Op::AddRowVec: {
        accum(n.a, g);
        Tensor db(1, g.cols());
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
        accum(n.b, db);
        break;
    }
    case Op::ScaleRows: {
        const Tensor& x = nodes_[n.a].value;
        const Tensor& s = nodes_[n.b].value;
        Tensor dx = g;
        Tensor ds(s.rows(), 1);
        for (int r = 0; r < x.rows(); ++r) {
            double acc = 0.0;
            for (int c = 0; c < x.cols(); ++c) {
                acc += g(r, c) * x(r, c);
                dx(r, c) *= s(r, 0);
            }
            ds(r, 0) = acc;
        }
        accum(n.a, dx);
        accum(n.b, ds);
        break;
    }
    case Op::TracePow3: {
        const Tensor& a = nodes_[n.a].value;
        Tensor d = transpose_plain(matmul_plain(a, a));
        double gv = g.item();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 3.0 * gv;
        accum(n.a, d);
        break;
    }
    }
}

// ---- symbolic backward (gradients as new tape nodes) ----

inline std::vector<Value> Tape::grad_nodes(Value root, std::span<const Value> wrt) {
    if (root.tape() != this) throw std::invalid_argument("grad_nodes: foreign value");
    if (!nodes_[root.index()].value.is_scalar())
        throw std::invalid_argument("grad_nodes: root must be a scalar");
    const std::int32_t n = root.index() + 1;
    // Indices strictly decrease along any root-to-leaf path, so the sweep
    // can stop at the lowest wrt index without losing contributions.
    std::int32_t cutoff = n;
    for (const Value& w : wrt) cutoff = std::min(cutoff, w.index());
    if (cutoff > root.index()) cutoff = root.index();
    // adjoint node index per forward node; -1 = no contribution yet
    std::vector<std::int32_t> adj(n, -1);
    auto accum_sym = [&](std::int32_t target, Value contribution) {
        if (target >= n) throw std::logic_error("grad_nodes: adjoint past root");
        if (target < cutoff) return; // unreachable from any wrt node
        if (adj[target] < 0) {
            adj[target] = contribution.index();
        } else {
            adj[target] = add(Value(this, adj[target]), contribution).index();
        }
    };

    adj[root.index()] = scalar(1.0).index();

    for (std::int32_t i = root.index(); i >= cutoff; --i) {
        if (adj[i] < 0) continue;
        Value g(this, adj[i]);
        // Snapshot parents: nodes_ may reallocate while emitting nodes.
        const Op op = nodes_[i].op;
        const std::int32_t pa = nodes_[i].a, pb = nodes_[i].b;
        const double c0 = nodes_[i].c0;
        Value self(this, i);
        const bool want_a = pa >= cutoff;
        const bool want_b = pb >= cutoff;
        switch (op) {
        case Op::Leaf:
            break;
        case Op::Add:
            if (want_a) accum_sym(pa, g);
            if (want_b) accum_sym(pb, g);
            break;
        case Op::Sub:
            if (want_a) accum_sym(pa, g);
            if (want_b) accum_sym(pb, neg(g));
            break;
        case Op::Mul:
            if (want_a) accum_sym(pa, mul(g, Value(this, pb)));
            if (want_b) accum_sym(pb, mul(g, Value(this, pa)));
            break;
        case Op::SMul:
            if (want_a) accum_sym(pa, sum(mul(g, Value(this, pb))));
            if (want_b) accum_sym(pb, smul(Value(this, pa), g));
            break;
        case Op::Affine:
            if (want_a) accum_sym(pa, affine(g, c0, 0.0));
            break;
        case Op::MatMul:
            if (want_a) accum_sym(pa, matmul(g, transpose(Value(this, pb))));
            if (want_b) accum_sym(pb, matmul(transpose(Value(this, pa)), g));
            break;
        case Op::Transpose:
            if (want_a) accum_sym(pa, transpose(g));
            break;
        case Op::Sigmoid:
            // y(1-y), differentiable in y
            if (want_a) accum_sym(pa, mul(g, mul(self, affine(self, -1.0, 1.0))));
            break;
        case Op::Relu: {
            if (!want_a) break;
            // 0/1 mask; second derivative is zero a.e.
            Tensor m = nodes_[pa].value;
            for (std::size_t k = 0; k < m.size(); ++k) m[k] = m[k] > 0.0 ? 1.0 : 0.0;
            accum_sym(pa, mul(g, constant(std::move(m))));
            break;
        }
        case Op::Log:
            // 1/x for x > 0
            if (want_a) accum_sym(pa, mul(g, rsqrt0(square(Value(this, pa)))));
            break;
        case Op::Exp:
            if (want_a) accum_sym(pa, mul(g, self));
            break;
        case Op::Square:
            if (want_a) accum_sym(pa, mul(g, affine(Value(this, pa), 2.0, 0.0)));
            break;
        case Op::Sqrt:
            // 0.5 / sqrt(x)
            if (want_a) accum_sym(pa, mul(g, affine(rsqrt0(Value(this, pa)), 0.5, 0.0)));
            break;
        case Op::Rsqrt0:
            // -0.5 x^(-3/2) = -0.5 y^3; y = 0 on the guarded branch
            if (want_a) accum_sym(pa, mul(g, affine(mul(mul(self, self), self), -0.5, 0.0)));
            break;
        case Op::Reciprocal:
            // -1/x^2 = -y^2
            if (want_a) accum_sym(pa, mul(g, affine(mul(self, self), -1.0, 0.0)));
            break;
        case Op::Sum: {
            if (!want_a) break;
            const Tensor& x = nodes_[pa].value;
            accum_sym(pa, smul(g, constant(Tensor::ones(x.rows(), x.cols()))));
            break;
        }
        case Op::RowSum: {
            if (!want_a) break;
            const Tensor& x = nodes_[pa].value;
            accum_sym(pa, matmul(g, constant(Tensor::ones(1, x.cols()))));
            break;
        }
        case Op::AddRowVec: {
            if (want_a) accum_sym(pa, g);
            if (want_b) {
                const Tensor& x = nodes_[pa].value;
                accum_sym(pb, matmul(constant(Tensor::ones(1, x.rows())), g));
            }
            break;
        }
        case Op::ScaleRows:
            if (want_a) accum_sym(pa, scale_rows(g, Value(this, pb)));
            if (want_b) accum_sym(pb, row_sum(mul(g, Value(this, pa))));
            break;
        case Op::TracePow3: {
            if (!want_a) break;
            Value a(this, pa);
            accum_sym(pa, smul(g, affine(transpose(matmul(a, a)), 3.0, 0.0)));
            break;
        }
        }
    }

    std::vector<Value> out;
    out.reserve(wrt.size());
    for (const Value& w : wrt) {
        if (w.tape() != this) throw std::invalid_argument("grad_nodes: foreign wrt value");
        if (w.index() < n && adj[w.index()] >= 0) {
            out.emplace_back(this, adj[w.index()]);
        } else {
            const Tensor& t = nodes_[w.index()].value;
            out.push_back(constant(Tensor(t.rows(), t.cols())));
        }
    }
    return out;
}

} // namespace sbd
