#pragma once

// Minimal reverse-mode engine. A Graph is a tape of eagerly evaluated nodes;
// backward() walks it once in reverse. Stochastic nodes record their noise on
// first execution and replay it on recompute(), so a graph re-evaluated after
// set_value() is a smooth deterministic function of its inputs. That is what
// lets finite differences certify every gradient, the pathwise Beta sampler
// included. A graph instance is single-owner during forward/backward; build
// one per step, or one per thread.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/numerics.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

enum class OpKind {
    input, constant,
    add, mul, matmul, concat_cols, slice_cols,
    sum, mean, row_sum,
    exp_, log_, sigmoid_, tanh_, softplus_, abs_, leaky_relu_,
    log_gamma_, digamma_,
    softmax_xent, softmax_row, embedding,
    beta_sample_, mmd_rbf_,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::input: return "input";
        case OpKind::constant: return "constant";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::matmul: return "matmul";
        case OpKind::concat_cols: return "concat";
        case OpKind::slice_cols: return "slice";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::row_sum: return "row_sum";
        case OpKind::exp_: return "exp";
        case OpKind::log_: return "log";
        case OpKind::sigmoid_: return "sigmoid";
        case OpKind::tanh_: return "tanh";
        case OpKind::softplus_: return "softplus";
        case OpKind::abs_: return "abs";
        case OpKind::leaky_relu_: return "leaky_relu";
        case OpKind::log_gamma_: return "log_gamma";
        case OpKind::digamma_: return "digamma";
        case OpKind::softmax_xent: return "softmax_cross_entropy";
        case OpKind::softmax_row: return "softmax";
        case OpKind::embedding: return "embedding_lookup";
        case OpKind::beta_sample_: return "beta_sample";
        case OpKind::mmd_rbf_: return "mmd_rbf";
    }
    return "?";
}

template <typename T>
class Graph {
  public:
    using NodeId = std::size_t;
    static constexpr NodeId npos = static_cast<NodeId>(-1);

    NodeId input(TensorData<T> value, bool requires_grad = true) {
        return push(OpKind::input, npos, npos, std::move(value), requires_grad);
    }

    NodeId constant(TensorData<T> value) {
        return push(OpKind::constant, npos, npos, std::move(value), false);
    }

    NodeId scalar_const(T x) { return constant(TensorData<T>::scalar(x)); }

    /// Constant copy of another node's current value; gradients stop here.
    NodeId detach(NodeId a) { return constant(nodes_[a].value); }

    // -- primitive binary/unary ops ------------------------------------

    NodeId add(NodeId a, NodeId b) { return binary(OpKind::add, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(OpKind::mul, a, b); }

    NodeId matmul(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        require(A.cols == B.rows, "matmul: inner dimensions must agree");
        return push(OpKind::matmul, a, b, TensorData<T>(A.rows, B.cols));
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        require(A.rows == B.rows, "concat: row counts must agree");
        return push(OpKind::concat_cols, a, b, TensorData<T>(A.rows, A.cols + B.cols));
    }

    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
        const auto& A = nodes_[a].value;
        require(c0 < c1 && c1 <= A.cols, "slice: column range out of bounds");
        NodeId id = push(OpKind::slice_cols, a, npos, TensorData<T>(A.rows, c1 - c0),
                         nodes_[a].requires_grad, /*defer=*/true);
        nodes_[id].i0 = c0;
        nodes_[id].i1 = c1;
        compute(id);
        return id;
    }

    NodeId sum(NodeId a) { return push(OpKind::sum, a, npos, TensorData<T>(1, 1)); }
    NodeId mean(NodeId a) { return push(OpKind::mean, a, npos, TensorData<T>(1, 1)); }

    NodeId row_sum(NodeId a) {
        return push(OpKind::row_sum, a, npos, TensorData<T>(nodes_[a].value.rows, 1));
    }

    NodeId exp(NodeId a) { return unary(OpKind::exp_, a); }
    NodeId log(NodeId a) { return unary(OpKind::log_, a); }
    NodeId sigmoid(NodeId a) { return unary(OpKind::sigmoid_, a); }
    NodeId tanh(NodeId a) { return unary(OpKind::tanh_, a); }
    NodeId softplus(NodeId a) { return unary(OpKind::softplus_, a); }
    NodeId abs(NodeId a) { return unary(OpKind::abs_, a); }
    NodeId log_gamma(NodeId a) { return unary(OpKind::log_gamma_, a); }
    NodeId digamma(NodeId a) { return unary(OpKind::digamma_, a); }

    NodeId leaky_relu(NodeId a, T slope) {
        NodeId id = push(OpKind::leaky_relu_, a, npos, TensorData<T>(nodes_[a].value.rows, nodes_[a].value.cols),
                         nodes_[a].requires_grad, /*defer=*/true);
        nodes_[id].scalar = slope;
        compute(id);
        return id;
    }

    /// Per-row -log softmax(logits)[target]; output [rows,1]. Pad positions
    /// are masked downstream by multiplying with a 0/1 weight column.
    NodeId softmax_xent(NodeId logits, std::vector<int> targets) {
        const auto& L = nodes_[logits].value;
        require(targets.size() == L.rows, "softmax_cross_entropy: one target per row");
        for (int t : targets) {
            require(t >= 0 && static_cast<std::size_t>(t) < L.cols,
                    "softmax_cross_entropy: target id out of range");
        }
        NodeId id = push(OpKind::softmax_xent, logits, npos, TensorData<T>(L.rows, 1),
                         nodes_[logits].requires_grad, /*defer=*/true);
        nodes_[id].ids = std::move(targets);
        compute(id);
        return id;
    }

    /// Row-wise softmax probabilities.
    NodeId softmax_row(NodeId logits) { return unary(OpKind::softmax_row, logits); }

    /// Rows of `table` gathered by id; gradient scatter-adds into the table.
    NodeId embedding(NodeId table, std::vector<int> ids) {
        const auto& W = nodes_[table].value;
        for (int t : ids) {
            require(t >= 0 && static_cast<std::size_t>(t) < W.rows,
                    "embedding_lookup: token id out of vocab");
        }
        NodeId id = push(OpKind::embedding, table, npos, TensorData<T>(ids.size(), W.cols),
                         nodes_[table].requires_grad, /*defer=*/true);
        nodes_[id].ids = std::move(ids);
        compute(id);
        return id;
    }

    /// Pathwise Beta sample, elementwise over alpha/beta. First execution
    /// draws z from two Gamma variates and records u = I_z(a,b); recompute()
    /// replays by solving I_z = u at the current parameters. Backward uses
    /// implicit CDF differentiation at 64-bit either way. Samples are clamped
    /// to [1e-6, 1-1e-6]; clamp events are counted.
    NodeId beta_sample(NodeId alpha, NodeId beta, RngStream& rng) {
        require(nodes_[alpha].value.same_shape(nodes_[beta].value),
                "beta_sample: alpha/beta shape mismatch");
        const std::size_t rows = nodes_[alpha].value.rows;
        const std::size_t cols = nodes_[alpha].value.cols;
        NodeId id = push(OpKind::beta_sample_, alpha, beta, TensorData<T>(rows, cols),
                         nodes_[alpha].requires_grad || nodes_[beta].requires_grad, /*defer=*/true);
        // push() may reallocate the tape; re-fetch operands afterwards.
        const TensorData<T>& A = nodes_[alpha].value;
        const TensorData<T>& B = nodes_[beta].value;
        Node& n = nodes_[id];
        n.noise.resize(A.numel());
        for (std::size_t i = 0; i < A.numel(); ++i) {
            const double a = static_cast<double>(A.v[i]);
            const double b = static_cast<double>(B.v[i]);
            require(a > 0.0 && b > 0.0, "beta_sample: parameters must be positive");
            const double ga = rng.gamma(a);
            const double gb = rng.gamma(b);
            double z = ga / (ga + gb);
            if (!(z >= kBetaClamp) || !(z <= 1.0 - kBetaClamp)) {
                z = std::min(1.0 - kBetaClamp, std::max(kBetaClamp, z));
                ++beta_clamp_count_;
            }
            n.noise[i] = reg_inc_beta(z, a, b);
            n.value.v[i] = static_cast<T>(z);
        }
        check_finite(id);
        return id;
    }

    /// Biased (V-statistic) squared MMD between the rows of x and y under an
    /// RBF kernel with the given bandwidth. Differentiable in both sides.
    NodeId mmd_rbf(NodeId x, NodeId y, double bandwidth) {
        const auto& X = nodes_[x].value;
        const auto& Y = nodes_[y].value;
        require(X.cols == Y.cols, "mmd_rbf: dimension mismatch");
        require(X.rows > 0 && Y.rows > 0, "mmd_rbf: sample sets must be non-empty");
        require(bandwidth > 0.0, "mmd_rbf: bandwidth must be positive");
        NodeId id = push(OpKind::mmd_rbf_, x, y, TensorData<T>(1, 1),
                         nodes_[x].requires_grad || nodes_[y].requires_grad, /*defer=*/true);
        nodes_[id].scalar = static_cast<T>(bandwidth);
        compute(id);
        return id;
    }

    // -- composed conveniences (no new primitives) ---------------------

    NodeId scale(NodeId a, T s) { return mul(a, scalar_const(s)); }
    NodeId add_scalar(NodeId a, T s) { return add(a, scalar_const(s)); }
    NodeId affine(NodeId a, T s, T c) { return add_scalar(scale(a, s), c); }
    NodeId one_minus(NodeId a) { return affine(a, T(-1), T(1)); }
    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, T(-1))); }
    NodeId square(NodeId a) { return mul(a, a); }
    NodeId reciprocal(NodeId a) { return exp(scale(log(a), T(-1))); }
    /// ln(e^a + e^b), stable via a + softplus(b - a).
    NodeId logaddexp(NodeId a, NodeId b) { return add(a, softplus(sub(b, a))); }

    // -- execution ------------------------------------------------------

    /// Re-runs every node in tape order. Inputs and constants keep their
    /// current values; stochastic nodes replay recorded noise.
    void recompute() {
        for (NodeId i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].op == OpKind::input || nodes_[i].op == OpKind::constant) continue;
            compute(i);
        }
    }

    void set_value(NodeId id, TensorData<T> value) {
        Node& n = nodes_[id];
        require(n.op == OpKind::input || n.op == OpKind::constant,
                "set_value: only leaf nodes can be assigned");
        require(n.value.same_shape(value), "set_value: shape mismatch");
        n.value = std::move(value);
    }

    /// Reverse pass from a scalar output. Gradients of previous backward
    /// calls are cleared.
    void backward(NodeId out) {
        require(nodes_[out].value.numel() == 1, "backward: output must be scalar");
        require(nodes_[out].requires_grad, "backward: output does not require grad");
        for (Node& n : nodes_) {
            if (n.requires_grad) {
                n.grad = TensorData<T>(n.value.rows, n.value.cols, T(0));
            } else {
                n.grad = TensorData<T>();
            }
        }
        nodes_[out].grad.v[0] = T(1);
        for (NodeId i = out + 1; i-- > 0;) {
            if (!nodes_[i].requires_grad) continue;
            push_grads(i);
        }
    }

    const TensorData<T>& value(NodeId id) const { return nodes_[id].value; }

    /// Zero tensor for nodes outside the differentiable cone.
    TensorData<T> grad(NodeId id) const {
        const Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.numel() == 0) {
            return TensorData<T>(n.value.rows, n.value.cols, T(0));
        }
        return n.grad;
    }

    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    std::size_t beta_clamp_count() const { return beta_clamp_count_; }

  private:
    static constexpr double kBetaClamp = 1e-6;

    struct Node {
        OpKind op;
        NodeId a = npos;
        NodeId b = npos;
        TensorData<T> value;
        TensorData<T> grad;
        bool requires_grad = false;
        std::size_t i0 = 0, i1 = 0;       // slice bounds
        T scalar = T(0);                  // leaky slope / mmd bandwidth
        std::vector<int> ids;             // embedding ids, xent targets
        std::vector<double> noise;        // beta_sample recorded u
    };

    std::vector<Node> nodes_;
    std::size_t beta_clamp_count_ = 0;

    NodeId unary(OpKind op, NodeId a) {
        const auto& A = nodes_[a].value;
        TensorData<T> out = (op == OpKind::sum || op == OpKind::mean)
                                ? TensorData<T>(1, 1)
                                : TensorData<T>(A.rows, A.cols);
        return push(op, a, npos, std::move(out));
    }

    // Elementwise binary with broadcasting on the second operand:
    // same shape, scalar [1,1], row [1,C], or column [R,1].
    NodeId binary(OpKind op, NodeId a, NodeId b) {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        const bool ok = A.same_shape(B) || B.numel() == 1 ||
                        (B.rows == 1 && B.cols == A.cols) ||
                        (B.cols == 1 && B.rows == A.rows);
        require(ok, std::string(op_name(op)) + ": shapes not broadcastable");
        return push(op, a, b, TensorData<T>(A.rows, A.cols));
    }

    NodeId push(OpKind op, NodeId a, NodeId b, TensorData<T> value,
                bool rg_override = false, bool defer = false) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(value);
        if (op == OpKind::input) {
            n.requires_grad = rg_override;
        } else if (op == OpKind::constant) {
            n.requires_grad = false;
        } else if (defer) {
            n.requires_grad = rg_override;
        } else {
            n.requires_grad = (a != npos && nodes_[a].requires_grad) ||
                              (b != npos && nodes_[b].requires_grad);
        }
        nodes_.push_back(std::move(n));
        const NodeId id = nodes_.size() - 1;
        if (!defer && op != OpKind::input && op != OpKind::constant) compute(id);
        if (op == OpKind::input || op == OpKind::constant) check_finite(id);
        return id;
    }

    // Broadcast-aware index into operand B given A's (r,c).
    static std::size_t bidx(const TensorData<T>& B, std::size_t r, std::size_t c) {
        if (B.numel() == 1) return 0;
        if (B.rows == 1) return c;
        if (B.cols == 1) return r;
        return r * B.cols + c;
    }

    void check_finite(NodeId id) {
        if (!nodes_[id].value.all_finite()) {
            throw numeric_error("non-finite value in op '" + std::string(op_name(nodes_[id].op)) +
                                "' (node " + std::to_string(id) + ")");
        }
    }

    void compute(NodeId id) {
        Node& n = nodes_[id];
        const TensorData<T>* A = n.a == npos ? nullptr : &nodes_[n.a].value;
        const TensorData<T>* B = n.b == npos ? nullptr : &nodes_[n.b].value;
        TensorData<T>& out = n.value;
        switch (n.op) {
            case OpKind::input:
            case OpKind::constant:
                break;
            case OpKind::add:
                for (std::size_t r = 0; r < A->rows; ++r)
                    for (std::size_t c = 0; c < A->cols; ++c)
                        out.at(r, c) = A->at(r, c) + B->v[bidx(*B, r, c)];
                break;
            case OpKind::mul:
                for (std::size_t r = 0; r < A->rows; ++r)
                    for (std::size_t c = 0; c < A->cols; ++c)
                        out.at(r, c) = A->at(r, c) * B->v[bidx(*B, r, c)];
                break;
            case OpKind::matmul: {
                std::fill(out.v.begin(), out.v.end(), T(0));
                for (std::size_t i = 0; i < A->rows; ++i) {
                    for (std::size_t k = 0; k < A->cols; ++k) {
                        const T aik = A->at(i, k);
                        if (aik == T(0)) continue;
                        const T* brow = &B->v[k * B->cols];
                        T* orow = &out.v[i * out.cols];
                        for (std::size_t j = 0; j < B->cols; ++j) orow[j] += aik * brow[j];
                    }
                }
                break;
            }
            case OpKind::concat_cols:
                for (std::size_t r = 0; r < out.rows; ++r) {
                    for (std::size_t c = 0; c < A->cols; ++c) out.at(r, c) = A->at(r, c);
                    for (std::size_t c = 0; c < B->cols; ++c) out.at(r, A->cols + c) = B->at(r, c);
                }
                break;
            case OpKind::slice_cols:
                for (std::size_t r = 0; r < out.rows; ++r)
                    for (std::size_t c = 0; c < out.cols; ++c)
                        out.at(r, c) = A->at(r, n.i0 + c);
                break;
            case OpKind::sum: {
                T s = T(0);
                for (const T& x : A->v) s += x;
                out.v[0] = s;
                break;
            }
            case OpKind::mean: {
                T s = T(0);
                for (const T& x : A->v) s += x;
                out.v[0] = s / static_cast<T>(A->numel());
                break;
            }
            case OpKind::row_sum:
                for (std::size_t r = 0; r < A->rows; ++r) {
                    T s = T(0);
                    for (std::size_t c = 0; c < A->cols; ++c) s += A->at(r, c);
                    out.v[r] = s;
                }
                break;
            case OpKind::exp_:
                for (std::size_t i = 0; i < A->numel(); ++i) out.v[i] = std::exp(A->v[i]);
                break;
            case OpKind::log_:
                for (std::size_t i = 0; i < A->numel(); ++i) out.v[i] = std::log(A->v[i]);
                break;
            case OpKind::sigmoid_:
                for (std::size_t i = 0; i < A->numel(); ++i) {
                    const T x = A->v[i];
                    out.v[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                         : std::exp(x) / (T(1) + std::exp(x));
                }
                break;
            case OpKind::tanh_:
                for (std::size_t i = 0; i < A->numel(); ++i) out.v[i] = std::tanh(A->v[i]);
                break;
            case OpKind::softplus_:
                for (std::size_t i = 0; i < A->numel(); ++i) {
                    const T x = A->v[i];
                    out.v[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
                }
                break;
            case OpKind::abs_:
                for (std::size_t i = 0; i < A->numel(); ++i) out.v[i] = std::fabs(A->v[i]);
                break;
            case OpKind::leaky_relu_:
                for (std::size_t i = 0; i < A->numel(); ++i) {
                    const T x = A->v[i];
                    out.v[i] = x >= T(0) ? x : n.scalar * x;
                }
                break;
            case OpKind::log_gamma_:
                for (std::size_t i = 0; i < A->numel(); ++i)
                    out.v[i] = static_cast<T>(sllab::log_gamma(static_cast<double>(A->v[i])));
                break;
            case OpKind::digamma_:
                for (std::size_t i = 0; i < A->numel(); ++i)
                    out.v[i] = static_cast<T>(sllab::digamma(static_cast<double>(A->v[i])));
                break;
            case OpKind::softmax_xent:
                for (std::size_t r = 0; r < A->rows; ++r) {
                    const T* row = &A->v[r * A->cols];
                    T mx = row[0];
                    for (std::size_t c = 1; c < A->cols; ++c) mx = std::max(mx, row[c]);
                    T lse = T(0);
                    for (std::size_t c = 0; c < A->cols; ++c) lse += std::exp(row[c] - mx);
                    lse = mx + std::log(lse);
                    out.v[r] = lse - row[n.ids[r]];
                }
                break;
            case OpKind::softmax_row:
                for (std::size_t r = 0; r < A->rows; ++r) {
                    const T* row = &A->v[r * A->cols];
                    T* orow = &out.v[r * out.cols];
                    T mx = row[0];
                    for (std::size_t c = 1; c < A->cols; ++c) mx = std::max(mx, row[c]);
                    T z = T(0);
                    for (std::size_t c = 0; c < A->cols; ++c) {
                        orow[c] = std::exp(row[c] - mx);
                        z += orow[c];
                    }
                    for (std::size_t c = 0; c < A->cols; ++c) orow[c] /= z;
                }
                break;
            case OpKind::embedding:
                for (std::size_t r = 0; r < n.ids.size(); ++r)
                    for (std::size_t c = 0; c < A->cols; ++c)
                        out.at(r, c) = A->at(static_cast<std::size_t>(n.ids[r]), c);
                break;
            case OpKind::beta_sample_:
                // Replay path: solve I_z(a,b) = u at the current parameters.
                for (std::size_t i = 0; i < out.numel(); ++i) {
                    const double a = static_cast<double>(A->v[i]);
                    const double b = static_cast<double>(B->v[i]);
                    double z = inv_reg_inc_beta(n.noise[i], a, b);
                    z = std::min(1.0 - kBetaClamp, std::max(kBetaClamp, z));
                    out.v[i] = static_cast<T>(z);
                }
                break;
            case OpKind::mmd_rbf_:
                out.v[0] = static_cast<T>(mmd_forward(*A, *B, static_cast<double>(n.scalar)));
                break;
        }
        check_finite(id);
    }

    static double rbf(const T* x, const T* y, std::size_t d, double inv_two_h2) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = static_cast<double>(x[c]) - static_cast<double>(y[c]);
            s += diff * diff;
        }
        return std::exp(-s * inv_two_h2);
    }

    static double mmd_forward(const TensorData<T>& X, const TensorData<T>& Y, double h) {
        const double inv_two_h2 = 1.0 / (2.0 * h * h);
        const std::size_t nx = X.rows, ny = Y.rows, d = X.cols;
        double sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < nx; ++j)
                sxx += rbf(&X.v[i * d], &X.v[j * d], d, inv_two_h2);
        for (std::size_t i = 0; i < ny; ++i)
            for (std::size_t j = 0; j < ny; ++j)
                syy += rbf(&Y.v[i * d], &Y.v[j * d], d, inv_two_h2);
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < ny; ++j)
                sxy += rbf(&X.v[i * d], &Y.v[j * d], d, inv_two_h2);
        const double a = sxx / static_cast<double>(nx * nx);
        const double b = sxy / static_cast<double>(nx * ny);
        const double c = syy / static_cast<double>(ny * ny);
        return a + c - 2.0 * b;
    }

    void accumulate(NodeId target, std::size_t r, std::size_t c, T g) {
        Node& t = nodes_[target];
        if (!t.requires_grad) return;
        t.grad.v[bidx(t.value, r, c)] += g;
    }

    void push_grads(NodeId id) {
        Node& n = nodes_[id];
        const TensorData<T>& G = n.grad;
        const TensorData<T>* A = n.a == npos ? nullptr : &nodes_[n.a].value;
        const TensorData<T>* B = n.b == npos ? nullptr : &nodes_[n.b].value;
        const bool ga = n.a != npos && nodes_[n.a].requires_grad;
        const bool gb = n.b != npos && nodes_[n.b].requires_grad;
        if (!ga && !gb) return;
        switch (n.op) {
            case OpKind::input:
            case OpKind::constant:
                break;
            case OpKind::add:
                for (std::size_t r = 0; r < G.rows; ++r)
                    for (std::size_t c = 0; c < G.cols; ++c) {
                        const T g = G.at(r, c);
                        if (ga) accumulate(n.a, r, c, g);
                        if (gb) accumulate(n.b, r, c, g);
                    }
                break;
            case OpKind::mul:
                for (std::size_t r = 0; r < G.rows; ++r)
                    for (std::size_t c = 0; c < G.cols; ++c) {
                        const T g = G.at(r, c);
                        if (ga) accumulate(n.a, r, c, g * B->v[bidx(*B, r, c)]);
                        if (gb) accumulate(n.b, r, c, g * A->at(r, c));
                    }
                break;
            case OpKind::matmul: {
                // dA = G B^T, dB = A^T G
                if (ga) {
                    TensorData<T>& dA = nodes_[n.a].grad;
                    for (std::size_t i = 0; i < A->rows; ++i)
                        for (std::size_t j = 0; j < B->cols; ++j) {
                            const T g = G.at(i, j);
                            if (g == T(0)) continue;
                            for (std::size_t k = 0; k < A->cols; ++k)
                                dA.at(i, k) += g * B->at(k, j);
                        }
                }
                if (gb) {
                    TensorData<T>& dB = nodes_[n.b].grad;
                    for (std::size_t i = 0; i < A->rows; ++i)
                        for (std::size_t k = 0; k < A->cols; ++k) {
                            const T a = A->at(i, k);
                            if (a == T(0)) continue;
                            for (std::size_t j = 0; j < B->cols; ++j)
                                dB.at(k, j) += a * G.at(i, j);
                        }
                }
                break;
            }
            case OpKind::concat_cols:
                for (std::size_t r = 0; r < G.rows; ++r) {
                    if (ga)
                        for (std::size_t c = 0; c < A->cols; ++c)
                            nodes_[n.a].grad.at(r, c) += G.at(r, c);
                    if (gb)
                        for (std::size_t c = 0; c < B->cols; ++c)
                            nodes_[n.b].grad.at(r, c) += G.at(r, A->cols + c);
                }
                break;
            case OpKind::slice_cols:
                for (std::size_t r = 0; r < G.rows; ++r)
                    for (std::size_t c = 0; c < G.cols; ++c)
                        nodes_[n.a].grad.at(r, n.i0 + c) += G.at(r, c);
                break;
            case OpKind::sum:
                for (T& g : nodes_[n.a].grad.v) g += G.v[0];
                break;
            case OpKind::mean: {
                const T g = G.v[0] / static_cast<T>(A->numel());
                for (T& x : nodes_[n.a].grad.v) x += g;
                break;
            }
            case OpKind::row_sum:
                for (std::size_t r = 0; r < A->rows; ++r)
                    for (std::size_t c = 0; c < A->cols; ++c)
                        nodes_[n.a].grad.at(r, c) += G.v[r];
                break;
            case OpKind::exp_:
                for (std::size_t i = 0; i < G.numel(); ++i)
                    nodes_[n.a].grad.v[i] += G.v[i] * n.value.v[i];
                break;
            case OpKind::log_:
                for (std::size_t i = 0; i < G.numel(); ++i)
                    nodes_[n.a].grad.v[i] += G.v[i] / A->v[i];
                break;
            case OpKind::sigmoid_:
                for (std::size_t i = 0; i < G.numel(); ++i) {
                    const T s = n.value.v[i];
                    nodes_[n.a].grad.v[i] += G.v[i] * s * (T(1) - s);
                }
                break;
            case OpKind::tanh_:
                for (std::size_t i = 0; i < G.numel(); ++i) {
                    const T t = n.value.v[i];
                    nodes_[n.a].grad.v[i] += G.v[i] * (T(1) - t * t);
                }
                break;
            case OpKind::softplus_:
                for (std::size_t i = 0; i < G.numel(); ++i) {
                    const T x = A->v[i];
                    const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                          : std::exp(x) / (T(1) + std::exp(x));
                    nodes_[n.a].grad.v[i] += G.v[i] * s;
                }
                break;
            case OpKind::abs_:
                for (std::size_t i = 0; i < G.numel(); ++i) {
                    const T x = A->v[i];
                    const T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                    nodes_[n.a].grad.v[i] += G.v[i] * s;
                }
                break;
            case OpKind::leaky_relu_:
                for (std::size_t i = 0; i < G.numel(); ++i)
                    nodes_[n.a].grad.v[i] += G.v[i] * (A->v[i] >= T(0) ? T(1) : n.scalar);
                break;
            case OpKind::log_gamma_:
                for (std::size_t i = 0; i < G.numel(); ++i)
                    nodes_[n.a].grad.v[i] +=
                        G.v[i] * static_cast<T>(sllab::digamma(static_cast<double>(A->v[i])));
                break;
            case OpKind::digamma_:
                for (std::size_t i = 0; i < G.numel(); ++i)
                    nodes_[n.a].grad.v[i] +=
                        G.v[i] * static_cast<T>(sllab::trigamma(static_cast<double>(A->v[i])));
                break;
            case OpKind::softmax_xent:
                for (std::size_t r = 0; r < A->rows; ++r) {
                    const T g = G.v[r];
                    if (g == T(0)) continue;
                    const T* row = &A->v[r * A->cols];
                    T mx = row[0];
                    for (std::size_t c = 1; c < A->cols; ++c) mx = std::max(mx, row[c]);
                    T z = T(0);
                    for (std::size_t c = 0; c < A->cols; ++c) z += std::exp(row[c] - mx);
                    TensorData<T>& dA = nodes_[n.a].grad;
                    for (std::size_t c = 0; c < A->cols; ++c)
                        dA.at(r, c) += g * std::exp(row[c] - mx) / z;
                    dA.at(r, static_cast<std::size_t>(n.ids[r])) -= g;
                }
                break;
            case OpKind::softmax_row:
                for (std::size_t r = 0; r < G.rows; ++r) {
                    const T* p = &n.value.v[r * G.cols];
                    const T* g = &G.v[r * G.cols];
                    T dot = T(0);
                    for (std::size_t c = 0; c < G.cols; ++c) dot += g[c] * p[c];
                    TensorData<T>& dA = nodes_[n.a].grad;
                    for (std::size_t c = 0; c < G.cols; ++c)
                        dA.at(r, c) += p[c] * (g[c] - dot);
                }
                break;
            case OpKind::embedding:
                for (std::size_t r = 0; r < n.ids.size(); ++r)
                    for (std::size_t c = 0; c < G.cols; ++c)
                        nodes_[n.a].grad.at(static_cast<std::size_t>(n.ids[r]), c) += G.at(r, c);
                break;
            case OpKind::beta_sample_:
                // dz/da = -(dI_z/da)/pdf(z), same in b; dI by 64-bit central
                // differences in the parameter.
                for (std::size_t i = 0; i < G.numel(); ++i) {
                    const T g = G.v[i];
                    if (g == T(0)) continue;
                    const double a = static_cast<double>(A->v[i]);
                    const double b = static_cast<double>(B->v[i]);
                    const double z = static_cast<double>(n.value.v[i]);
                    const double pdf = std::exp(beta_log_pdf(z, a, b));
                    if (ga) {
                        const double h = 1e-5 * std::max(1.0, std::fabs(a));
                        const double dI = (reg_inc_beta(z, a + h, b) - reg_inc_beta(z, a - h, b)) / (2.0 * h);
                        nodes_[n.a].grad.v[i] += g * static_cast<T>(-dI / pdf);
                    }
                    if (gb) {
                        const double h = 1e-5 * std::max(1.0, std::fabs(b));
                        const double dI = (reg_inc_beta(z, a, b + h) - reg_inc_beta(z, a, b - h)) / (2.0 * h);
                        nodes_[n.b].grad.v[i] += g * static_cast<T>(-dI / pdf);
                    }
                }
                break;
            case OpKind::mmd_rbf_: {
                const double g = static_cast<double>(G.v[0]);
                if (g == 0.0) break;
                const double h = static_cast<double>(n.scalar);
                const double inv_h2 = 1.0 / (h * h);
                const double inv_two_h2 = 0.5 * inv_h2;
                const std::size_t nx = A->rows, ny = B->rows, d = A->cols;
                if (ga) {
                    TensorData<T>& dX = nodes_[n.a].grad;
                    for (std::size_t i = 0; i < nx; ++i) {
                        for (std::size_t j = 0; j < nx; ++j) {
                            const double k = rbf(&A->v[i * d], &A->v[j * d], d, inv_two_h2);
                            const double w = g * 2.0 * k * inv_h2 / static_cast<double>(nx * nx);
                            for (std::size_t c = 0; c < d; ++c)
                                dX.at(i, c) += static_cast<T>(w * (static_cast<double>(A->at(j, c)) -
                                                                   static_cast<double>(A->at(i, c))));
                        }
                        for (std::size_t j = 0; j < ny; ++j) {
                            const double k = rbf(&A->v[i * d], &B->v[j * d], d, inv_two_h2);
                            const double w = -g * 2.0 * k * inv_h2 / static_cast<double>(nx * ny);
                            for (std::size_t c = 0; c < d; ++c)
                                dX.at(i, c) += static_cast<T>(w * (static_cast<double>(B->at(j, c)) -
                                                                   static_cast<double>(A->at(i, c))));
                        }
                    }
                }
                if (gb) {
                    TensorData<T>& dY = nodes_[n.b].grad;
                    for (std::size_t j = 0; j < ny; ++j) {
                        for (std::size_t i = 0; i < ny; ++i) {
                            const double k = rbf(&B->v[j * d], &B->v[i * d], d, inv_two_h2);
                            const double w = g * 2.0 * k * inv_h2 / static_cast<double>(ny * ny);
                            for (std::size_t c = 0; c < d; ++c)
                                dY.at(j, c) += static_cast<T>(w * (static_cast<double>(B->at(i, c)) -
                                                                   static_cast<double>(B->at(j, c))));
                        }
                        for (std::size_t i = 0; i < nx; ++i) {
                            const double k = rbf(&A->v[i * d], &B->v[j * d], d, inv_two_h2);
                            const double w = -g * 2.0 * k * inv_h2 / static_cast<double>(nx * ny);
                            for (std::size_t c = 0; c < d; ++c)
                                dY.at(j, c) += static_cast<T>(w * (static_cast<double>(A->at(i, c)) -
                                                                   static_cast<double>(B->at(j, c))));
                        }
                    }
                }
                break;
            }
        }
    }
};

// ---------------------------------------------------------------------------
// GRU cell: reset/update gates with tanh candidate,
//   r = sig(x Wr + h Ur + br), z = sig(x Wz + h Uz + bz),
//   n = tanh(x Wn + r .* (h Un) + bn), h' = (1-z) .* n + z .* h.

template <typename T>
struct GruParams {
    using NodeId = typename Graph<T>::NodeId;
    NodeId wr, wz, wn;  // [E,H]
    NodeId ur, uz, un;  // [H,H]
    NodeId br, bz, bn;  // [1,H]
};

template <typename T>
typename Graph<T>::NodeId gru_cell(Graph<T>& g, typename Graph<T>::NodeId x,
                                   typename Graph<T>::NodeId h_prev, const GruParams<T>& p) {
    auto r = g.sigmoid(g.add(g.add(g.matmul(x, p.wr), g.matmul(h_prev, p.ur)), p.br));
    auto z = g.sigmoid(g.add(g.add(g.matmul(x, p.wz), g.matmul(h_prev, p.uz)), p.bz));
    auto n = g.tanh(g.add(g.add(g.matmul(x, p.wn), g.mul(r, g.matmul(h_prev, p.un))), p.bn));
    return g.add(g.mul(g.one_minus(z), n), g.mul(z, h_prev));
}

}  // namespace sllab
