#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "modalmend/rng.hpp"
#include "modalmend/tensor.hpp"

namespace modalmend {

// A named trainable tensor. Gradients accumulate here after Graph::backward.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
    void zero_grad() { grad.fill(0.0); }
};

// Owns parameters with stable addresses and handles fan-in uniform init.
class ParamStore {
public:
    // init uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; fan_in <= 0 gives zeros.
    Parameter* create(const std::string& name, Shape shape, int64_t fan_in, Rng& rng);
    Parameter* create_const(const std::string& name, Shape shape, double value);

    std::vector<Parameter*> all();
    Parameter* find(const std::string& name);
    size_t count() const { return params_.size(); }

private:
    std::deque<Parameter> params_;
};

using NodeId = int32_t;

// Reverse-mode expression graph. Forward values are computed eagerly at node
// creation; backward(root) fills gradients for every requires-grad node and
// accumulates into bound Parameters. One Graph instance per forward pass,
// confined to a single thread.
class Graph {
public:
    enum class Op : uint8_t {
        Leaf, Constant, Param,
        Add, Sub, Mul, Div, Affine,
        MatMul, Exp, Log, Sqrt, Abs, Relu, Sigmoid, Clamp,
        Softmax, LayerNorm,
        Sum, Mean, SumAxis, Frobenius,
        Transpose, TransposeLast2, Reshape, Slice, Concat, RepeatRows,
        Im2Col, ThresholdST,
    };

    // --- graph inputs ---
    NodeId constant(Tensor value);                  // never differentiated
    NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }
    NodeId leaf(Tensor value, bool requires_grad);  // free-standing differentiable input
    NodeId param(Parameter& p);                     // leaf bound to an external parameter

    // --- elementwise / broadcasting binary ops ---
    // Allowed shapes for b relative to a: identical; scalar; a strict suffix
    // of a's shape (row-style expansion); or [rows,1] against a 2-D a
    // (column-style expansion). No other broadcasting exists.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId div(NodeId a, NodeId b);
    NodeId affine(NodeId a, double scale, double shift);  // scale*a + shift

    // --- elementwise unary ---
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId abs(NodeId a);
    NodeId relu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId clamp(NodeId a, double lo, double hi);

    // --- linear algebra ---
    // [m,k]x[k,n]; [B,m,k]x[k,n]; [B,m,k]x[B,k,n]
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);        // rank-2
    NodeId transpose_last2(NodeId a);  // rank-3, swaps the two trailing axes

    // --- row-wise (last axis) ---
    NodeId softmax(NodeId a);
    NodeId layer_norm(NodeId a, double eps = 1e-10);

    // --- reductions ---
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId sum_axis(NodeId a, int64_t axis);  // rank-2 only; keeps the axis as size 1
    NodeId frobenius(NodeId a);               // sqrt(sum(a^2)) with a safe zero limit

    // --- structure ---
    NodeId reshape(NodeId a, Shape shape);
    NodeId slice(NodeId a, int64_t axis, int64_t start, int64_t len);
    NodeId concat(const std::vector<NodeId>& parts, int64_t axis);
    NodeId repeat_rows(NodeId a, int64_t n);  // prepends an axis of size n, copies

    // Patch extraction for strided convolution: [B,C,H,W] ->
    // [B, OH*OW, C*kh*kw] with zero padding. Backward scatters.
    NodeId im2col(NodeId a, int64_t kh, int64_t kw, int64_t stride, int64_t pad);

    // Hard threshold with a straight-through backward. Forward: x where
    // x > lam, else 0 (strict inequality). Backward: kept entries pass
    // gradients through unchanged; the threshold input receives the gradient
    // of the surrogate x*sigmoid((x-lam)/tau) w.r.t. lam. Forward values are
    // never affected by the surrogate.
    NodeId threshold_st(NodeId x, NodeId lam, double tau);

    // --- access ---
    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(NodeId id) const;
    size_t node_count() const { return nodes_.size(); }

    // Reverse-mode sweep from a scalar root. Accumulates into Parameter::grad
    // for bound leaves; caller is responsible for zeroing those beforehand.
    void backward(NodeId root);

private:
    struct Node {
        Op op;
        std::vector<NodeId> in;
        Tensor value;
        Tensor grad;  // allocated lazily during backward
        bool requires_grad = false;
        Parameter* bound = nullptr;
        double x0 = 0.0, x1 = 0.0;            // op scalars (clamp bounds, eps, tau, ...)
        int64_t i0 = 0, i1 = 0, i2 = 0, i3 = 0;  // op integers (axis, start, kernel, ...)
    };

    NodeId push(Node n);
    Node& at(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& at(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    Tensor& grad_buf(NodeId id);  // allocates zeros on first touch

    NodeId binary(Op op, NodeId a, NodeId b);
    void backward_binary(Node& n);
    void backward_node(NodeId id);

    std::vector<Node> nodes_;
};

} // namespace modalmend
