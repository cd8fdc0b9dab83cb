#include "modalmend/graph.hpp"

#include <algorithm>
#include <cmath>

namespace modalmend {

// ---------------------------------------------------------------------------
// ParamStore

Parameter* ParamStore::create(const std::string& name, Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    if (fan_in > 0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    }
    params_.emplace_back(name, std::move(t));
    return &params_.back();
}

Parameter* ParamStore::create_const(const std::string& name, Shape shape, double value) {
    params_.emplace_back(name, Tensor::full(std::move(shape), value));
    return &params_.back();
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

Parameter* ParamStore::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// small matmul kernels; fixed accumulation order keeps results deterministic

namespace {

// C += A[m,k] * B[k,n]
void mm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (int64_t l = 0; l < k; ++l) {
            const double a = a_row[l];
            if (a == 0.0) continue;
            const double* b_row = B + l * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C += A[m,n] * B[k,n]^T  -> C[m,k]
void mm_nt(const double* A, const double* B, double* C, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = A + i * n;
        double* c_row = C + i * k;
        for (int64_t j = 0; j < k; ++j) {
            const double* b_row = B + j * n;
            double acc = 0.0;
            for (int64_t l = 0; l < n; ++l) acc += a_row[l] * b_row[l];
            c_row[j] += acc;
        }
    }
}

// C += A[k,m]^T * B[k,n] -> C[m,n]
void mm_tn(const double* A, const double* B, double* C, int64_t k, int64_t m, int64_t n) {
    for (int64_t l = 0; l < k; ++l) {
        const double* a_row = A + l * m;
        const double* b_row = B + l * n;
        for (int64_t i = 0; i < m; ++i) {
            const double a = a_row[i];
            if (a == 0.0) continue;
            double* c_row = C + i * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

enum class Bcast { Same, Scalar, Suffix, Column };

Bcast classify_broadcast(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return Bcast::Same;
    if (shape_numel(b) == 1) return Bcast::Scalar;
    if (b.size() < a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return Bcast::Suffix;
    if (a.size() == 2 && b.size() == 2 && b[0] == a[0] && b[1] == 1) return Bcast::Column;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

} // namespace

// ---------------------------------------------------------------------------
// node plumbing

NodeId Graph::push(Node n) {
    const NodeId id = static_cast<NodeId>(nodes_.size());
    for (NodeId in : n.in) {
        if (in < 0 || in >= id) {
            throw Error("graph: operation input refers to a node not created before it (cycle)");
        }
    }
    nodes_.push_back(std::move(n));
    return id;
}

Tensor& Graph::grad_buf(NodeId id) {
    Node& n = at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Graph::grad(NodeId id) const {
    return at(id).grad;
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

NodeId Graph::param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.value = p.value;
    n.requires_grad = true;
    n.bound = &p;
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// binary ops

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const char* name = op == Op::Add ? "add" : op == Op::Sub ? "sub" : op == Op::Mul ? "mul" : "div";
    const Bcast mode = classify_broadcast(name, ta.shape(), tb.shape());

    Node n;
    n.op = op;
    n.in = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    n.i0 = static_cast<int64_t>(mode);
    n.value = Tensor(ta.shape());

    const int64_t size = ta.size();
    const int64_t bsize = tb.size();
    const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
    auto bindex = [&](int64_t i) -> int64_t {
        switch (mode) {
            case Bcast::Same: return i;
            case Bcast::Scalar: return 0;
            case Bcast::Suffix: return i % bsize;
            case Bcast::Column: return i / cols;
        }
        return 0;
    };

    double* out = n.value.data();
    const double* pa = ta.data();
    const double* pb = tb.data();
    switch (op) {
        case Op::Add: for (int64_t i = 0; i < size; ++i) out[i] = pa[i] + pb[bindex(i)]; break;
        case Op::Sub: for (int64_t i = 0; i < size; ++i) out[i] = pa[i] - pb[bindex(i)]; break;
        case Op::Mul: for (int64_t i = 0; i < size; ++i) out[i] = pa[i] * pb[bindex(i)]; break;
        case Op::Div: for (int64_t i = 0; i < size; ++i) out[i] = pa[i] / pb[bindex(i)]; break;
        default: break;
    }
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }

void Graph::backward_binary(Node& n) {
    const NodeId ia = n.in[0], ib = n.in[1];
    const Tensor& ta = at(ia).value;
    const Tensor& tb = at(ib).value;
    const Bcast mode = static_cast<Bcast>(n.i0);
    const int64_t size = ta.size();
    const int64_t bsize = tb.size();
    const int64_t cols = ta.rank() == 2 ? ta.dim(1) : 1;
    auto bindex = [&](int64_t i) -> int64_t {
        switch (mode) {
            case Bcast::Same: return i;
            case Bcast::Scalar: return 0;
            case Bcast::Suffix: return i % bsize;
            case Bcast::Column: return i / cols;
        }
        return 0;
    };

    const double* g = n.grad.data();
    const double* pa = ta.data();
    const double* pb = tb.data();
    const bool need_a = at(ia).requires_grad;
    const bool need_b = at(ib).requires_grad;
    double* ga = need_a ? grad_buf(ia).data() : nullptr;
    double* gb = need_b ? grad_buf(ib).data() : nullptr;

    switch (n.op) {
        case Op::Add:
            for (int64_t i = 0; i < size; ++i) {
                if (need_a) ga[i] += g[i];
                if (need_b) gb[bindex(i)] += g[i];
            }
            break;
        case Op::Sub:
            for (int64_t i = 0; i < size; ++i) {
                if (need_a) ga[i] += g[i];
                if (need_b) gb[bindex(i)] -= g[i];
            }
            break;
        case Op::Mul:
            for (int64_t i = 0; i < size; ++i) {
                const int64_t j = bindex(i);
                if (need_a) ga[i] += g[i] * pb[j];
                if (need_b) gb[j] += g[i] * pa[i];
            }
            break;
        case Op::Div:
            for (int64_t i = 0; i < size; ++i) {
                const int64_t j = bindex(i);
                const double inv = 1.0 / pb[j];
                if (need_a) ga[i] += g[i] * inv;
                if (need_b) gb[j] -= g[i] * pa[i] * inv * inv;
            }
            break;
        default: break;
    }
}

NodeId Graph::affine(NodeId a, double scale, double shift) {
    Node n;
    n.op = Op::Affine;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.x0 = scale;
    n.x1 = shift;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = scale * ta[i] + shift;
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise unary

NodeId Graph::exp(NodeId a) {
    Node n;
    n.op = Op::Exp;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = std::exp(ta[i]);
    return push(std::move(n));
}

NodeId Graph::log(NodeId a) {
    Node n;
    n.op = Op::Log;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = std::log(ta[i]);
    return push(std::move(n));
}

NodeId Graph::sqrt(NodeId a) {
    Node n;
    n.op = Op::Sqrt;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = std::sqrt(ta[i]);
    return push(std::move(n));
}

NodeId Graph::abs(NodeId a) {
    Node n;
    n.op = Op::Abs;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = std::abs(ta[i]);
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    Node n;
    n.op = Op::Relu;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
    Node n;
    n.op = Op::Sigmoid;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = stable_sigmoid(ta[i]);
    return push(std::move(n));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
    Node n;
    n.op = Op::Clamp;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.x0 = lo;
    n.x1 = hi;
    const Tensor& ta = value(a);
    n.value = Tensor(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) n.value[i] = std::min(std::max(ta[i], lo), hi);
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// matmul family

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;

    if (ta.rank() == 2 && tb.rank() == 2) {
        if (ta.dim(1) != tb.dim(0)) {
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()));
        }
        n.value = Tensor({ta.dim(0), tb.dim(1)});
        mm_nn(ta.data(), tb.data(), n.value.data(), ta.dim(0), ta.dim(1), tb.dim(1));
    } else if (ta.rank() == 3 && tb.rank() == 2) {
        if (ta.dim(2) != tb.dim(0)) {
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()));
        }
        n.value = Tensor({ta.dim(0), ta.dim(1), tb.dim(1)});
        const int64_t m = ta.dim(1), k = ta.dim(2), nn = tb.dim(1);
        for (int64_t bIdx = 0; bIdx < ta.dim(0); ++bIdx) {
            mm_nn(ta.data() + bIdx * m * k, tb.data(), n.value.data() + bIdx * m * nn, m, k, nn);
        }
    } else if (ta.rank() == 3 && tb.rank() == 3) {
        if (ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(1)) {
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()));
        }
        n.value = Tensor({ta.dim(0), ta.dim(1), tb.dim(2)});
        const int64_t m = ta.dim(1), k = ta.dim(2), nn = tb.dim(2);
        for (int64_t bIdx = 0; bIdx < ta.dim(0); ++bIdx) {
            mm_nn(ta.data() + bIdx * m * k, tb.data() + bIdx * k * nn, n.value.data() + bIdx * m * nn, m, k, nn);
        }
    } else {
        throw ShapeError("matmul: unsupported ranks for shapes " + shape_str(ta.shape()) + " and " + shape_str(tb.shape()));
    }
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(ta.shape()));
    Node n;
    n.op = Op::Transpose;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.value = Tensor({ta.dim(1), ta.dim(0)});
    for (int64_t i = 0; i < ta.dim(0); ++i) {
        for (int64_t j = 0; j < ta.dim(1); ++j) n.value[j * ta.dim(0) + i] = ta[i * ta.dim(1) + j];
    }
    return push(std::move(n));
}

NodeId Graph::transpose_last2(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.rank() != 3) throw ShapeError("transpose_last2: expected rank-3 tensor, got " + shape_str(ta.shape()));
    Node n;
    n.op = Op::TransposeLast2;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const int64_t B = ta.dim(0), m = ta.dim(1), k = ta.dim(2);
    n.value = Tensor({B, k, m});
    for (int64_t b = 0; b < B; ++b) {
        const double* src = ta.data() + b * m * k;
        double* dst = n.value.data() + b * m * k;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < k; ++j) dst[j * m + i] = src[i * k + j];
        }
    }
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// row-wise ops over the last axis

NodeId Graph::softmax(NodeId a) {
    const Tensor& ta = value(a);
    if (ta.rank() < 1) throw ShapeError("softmax: expected rank >= 1, got " + shape_str(ta.shape()));
    Node n;
    n.op = Op::Softmax;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.value = Tensor(ta.shape());
    const int64_t d = ta.dim(ta.rank() - 1);
    const int64_t rows = ta.size() / d;
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = ta.data() + r * d;
        double* y = n.value.data() + r * d;
        double mx = x[0];
        for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
        double z = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            y[i] = std::exp(x[i] - mx);
            z += y[i];
        }
        for (int64_t i = 0; i < d; ++i) y[i] /= z;
    }
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId a, double eps) {
    const Tensor& ta = value(a);
    if (ta.rank() < 1) throw ShapeError("layer_norm: expected rank >= 1, got " + shape_str(ta.shape()));
    Node n;
    n.op = Op::LayerNorm;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.x0 = eps;
    n.value = Tensor(ta.shape());
    const int64_t d = ta.dim(ta.rank() - 1);
    const int64_t rows = ta.size() / d;
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = ta.data() + r * d;
        double* y = n.value.data() + r * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += x[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv;
    }
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// reductions

NodeId Graph::sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (int64_t i = 0; i < ta.size(); ++i) acc += ta[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
    Node n;
    n.op = Op::Mean;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (int64_t i = 0; i < ta.size(); ++i) acc += ta[i];
    n.value = Tensor::scalar(acc / static_cast<double>(ta.size()));
    return push(std::move(n));
}

NodeId Graph::sum_axis(NodeId a, int64_t axis) {
    const Tensor& ta = value(a);
    if (ta.rank() != 2) throw ShapeError("sum_axis: expected rank-2 tensor, got " + shape_str(ta.shape()));
    if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
    Node n;
    n.op = Op::SumAxis;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.i0 = axis;
    const int64_t rows = ta.dim(0), cols = ta.dim(1);
    if (axis == 0) {
        n.value = Tensor({1, cols});
        for (int64_t i = 0; i < rows; ++i) {
            for (int64_t j = 0; j < cols; ++j) n.value[j] += ta[i * cols + j];
        }
    } else {
        n.value = Tensor({rows, 1});
        for (int64_t i = 0; i < rows; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < cols; ++j) acc += ta[i * cols + j];
            n.value[i] = acc;
        }
    }
    return push(std::move(n));
}

NodeId Graph::frobenius(NodeId a) {
    Node n;
    n.op = Op::Frobenius;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    const Tensor& ta = value(a);
    double acc = 0.0;
    for (int64_t i = 0; i < ta.size(); ++i) acc += ta[i] * ta[i];
    n.value = Tensor::scalar(std::sqrt(acc));
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// structural ops

NodeId Graph::reshape(NodeId a, Shape shape) {
    const Tensor& ta = value(a);
    if (shape_numel(shape) != ta.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(ta.shape()) + " as " + shape_str(shape));
    }
    Node n;
    n.op = Op::Reshape;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.value = Tensor(std::move(shape), ta.vec());
    return push(std::move(n));
}

NodeId Graph::slice(NodeId a, int64_t axis, int64_t start, int64_t len) {
    const Tensor& ta = value(a);
    if (axis < 0 || axis >= ta.rank()) throw ShapeError("slice: axis out of range for " + shape_str(ta.shape()));
    if (start < 0 || len < 1 || start + len > ta.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(ta.shape()));
    }
    Node n;
    n.op = Op::Slice;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.i0 = axis;
    n.i1 = start;
    n.i2 = len;
    Shape out_shape = ta.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    n.value = Tensor(out_shape);

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= ta.dim(i);
    for (int64_t i = axis + 1; i < ta.rank(); ++i) inner *= ta.dim(i);
    const int64_t in_axis = ta.dim(axis);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t k = 0; k < len; ++k) {
            const double* src = ta.data() + (o * in_axis + start + k) * inner;
            double* dst = n.value.data() + (o * len + k) * inner;
            std::copy(src, src + inner, dst);
        }
    }
    return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Tensor& t0 = value(parts[0]);
    if (axis < 0 || axis >= t0.rank()) throw ShapeError("concat: axis out of range for " + shape_str(t0.shape()));
    Shape out_shape = t0.shape();
    int64_t total = 0;
    for (NodeId p : parts) {
        const Tensor& tp = value(p);
        if (tp.rank() != t0.rank()) {
            throw ShapeError("concat: rank mismatch between " + shape_str(t0.shape()) + " and " + shape_str(tp.shape()));
        }
        for (int64_t i = 0; i < t0.rank(); ++i) {
            if (i != axis && tp.dim(i) != t0.dim(i)) {
                throw ShapeError("concat: incompatible shapes " + shape_str(t0.shape()) + " and " + shape_str(tp.shape()));
            }
        }
        total += tp.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = total;

    Node n;
    n.op = Op::Concat;
    n.in = parts;
    for (NodeId p : parts) n.requires_grad = n.requires_grad || at(p).requires_grad;
    n.i0 = axis;
    n.value = Tensor(out_shape);

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= t0.dim(i);
    for (int64_t i = axis + 1; i < t0.rank(); ++i) inner *= t0.dim(i);
    int64_t offset = 0;
    for (NodeId p : parts) {
        const Tensor& tp = value(p);
        const int64_t len = tp.dim(axis);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = tp.data() + o * len * inner;
            double* dst = n.value.data() + (o * total + offset) * inner;
            std::copy(src, src + len * inner, dst);
        }
        offset += len;
    }
    return push(std::move(n));
}

NodeId Graph::repeat_rows(NodeId a, int64_t nrep) {
    if (nrep < 1) throw ShapeError("repeat_rows: repetition count must be >= 1");
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::RepeatRows;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.i0 = nrep;
    Shape out_shape;
    out_shape.push_back(nrep);
    for (int64_t d : ta.shape()) out_shape.push_back(d);
    n.value = Tensor(out_shape);
    for (int64_t r = 0; r < nrep; ++r) {
        std::copy(ta.data(), ta.data() + ta.size(), n.value.data() + r * ta.size());
    }
    return push(std::move(n));
}

NodeId Graph::im2col(NodeId a, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    const Tensor& ta = value(a);
    if (ta.rank() != 4) throw ShapeError("im2col: expected rank-4 input, got " + shape_str(ta.shape()));
    const int64_t B = ta.dim(0), C = ta.dim(1), H = ta.dim(2), W = ta.dim(3);
    const int64_t oh = (H + 2 * pad - kh) / stride + 1;
    const int64_t ow = (W + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) {
        throw ShapeError("im2col: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit input " + shape_str(ta.shape()));
    }
    Node n;
    n.op = Op::Im2Col;
    n.in = {a};
    n.requires_grad = at(a).requires_grad;
    n.i0 = kh;
    n.i1 = kw;
    n.i2 = stride;
    n.i3 = pad;
    n.value = Tensor({B, oh * ow, C * kh * kw});

    double* out = n.value.data();
    const int64_t patch = C * kh * kw;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oi = 0; oi < oh; ++oi) {
            for (int64_t oj = 0; oj < ow; ++oj) {
                double* dst = out + (b * oh * ow + oi * ow + oj) * patch;
                for (int64_t c = 0; c < C; ++c) {
                    for (int64_t ki = 0; ki < kh; ++ki) {
                        const int64_t y = oi * stride - pad + ki;
                        for (int64_t kj = 0; kj < kw; ++kj) {
                            const int64_t x = oj * stride - pad + kj;
                            double v = 0.0;
                            if (y >= 0 && y < H && x >= 0 && x < W) {
                                v = ta[((b * C + c) * H + y) * W + x];
                            }
                            dst[c * kh * kw + ki * kw + kj] = v;
                        }
                    }
                }
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::threshold_st(NodeId x, NodeId lam, double tau) {
    const Tensor& tx = value(x);
    const Tensor& tl = value(lam);
    if (tl.size() != 1) throw ShapeError("threshold_st: threshold must be a scalar, got " + shape_str(tl.shape()));
    if (tau <= 0.0) throw Error("threshold_st: tau must be positive");
    Node n;
    n.op = Op::ThresholdST;
    n.in = {x, lam};
    n.requires_grad = at(x).requires_grad || at(lam).requires_grad;
    n.x0 = tau;
    n.value = Tensor(tx.shape());
    const double L = tl[0];
    for (int64_t i = 0; i < tx.size(); ++i) n.value[i] = tx[i] > L ? tx[i] : 0.0;
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Graph::backward_node(NodeId id) {
    Node& n = at(id);
    const double* g = n.grad.data();
    const int64_t size = n.value.size();

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
        case Op::Param:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::Div:
            backward_binary(n);
            return;
        case Op::Affine: {
            if (!at(n.in[0]).requires_grad) return;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += n.x0 * g[i];
            return;
        }
        case Op::Exp: {
            if (!at(n.in[0]).requires_grad) return;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += g[i] * n.value[i];
            return;
        }
        case Op::Log: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += g[i] / ta[i];
            return;
        }
        case Op::Sqrt: {
            if (!at(n.in[0]).requires_grad) return;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += g[i] * 0.5 / n.value[i];
            return;
        }
        case Op::Abs: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) {
                const double s = ta[i] > 0.0 ? 1.0 : (ta[i] < 0.0 ? -1.0 : 0.0);
                ga[i] += g[i] * s;
            }
            return;
        }
        case Op::Relu: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) {
                if (ta[i] > 0.0) ga[i] += g[i];
            }
            return;
        }
        case Op::Sigmoid: {
            if (!at(n.in[0]).requires_grad) return;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
            return;
        }
        case Op::Clamp: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) {
                if (ta[i] >= n.x0 && ta[i] <= n.x1) ga[i] += g[i];
            }
            return;
        }
        case Op::MatMul: {
            const Tensor& ta = at(n.in[0]).value;
            const Tensor& tb = at(n.in[1]).value;
            const bool need_a = at(n.in[0]).requires_grad;
            const bool need_b = at(n.in[1]).requires_grad;
            if (ta.rank() == 2 && tb.rank() == 2) {
                const int64_t m = ta.dim(0), k = ta.dim(1), nn = tb.dim(1);
                if (need_a) mm_nt(g, tb.data(), grad_buf(n.in[0]).data(), m, nn, k);
                if (need_b) mm_tn(ta.data(), g, grad_buf(n.in[1]).data(), m, k, nn);
            } else if (ta.rank() == 3 && tb.rank() == 2) {
                const int64_t B = ta.dim(0), m = ta.dim(1), k = ta.dim(2), nn = tb.dim(1);
                for (int64_t b = 0; b < B; ++b) {
                    const double* gb = g + b * m * nn;
                    if (need_a) mm_nt(gb, tb.data(), grad_buf(n.in[0]).data() + b * m * k, m, nn, k);
                    if (need_b) mm_tn(ta.data() + b * m * k, gb, grad_buf(n.in[1]).data(), m, k, nn);
                }
            } else {
                const int64_t B = ta.dim(0), m = ta.dim(1), k = ta.dim(2), nn = tb.dim(2);
                for (int64_t b = 0; b < B; ++b) {
                    const double* gb = g + b * m * nn;
                    if (need_a) mm_nt(gb, tb.data() + b * k * nn, grad_buf(n.in[0]).data() + b * m * k, m, nn, k);
                    if (need_b) mm_tn(ta.data() + b * m * k, gb, grad_buf(n.in[1]).data() + b * k * nn, m, k, nn);
                }
            }
            return;
        }
        case Op::Transpose: {
            if (!at(n.in[0]).requires_grad) return;
            const int64_t rows = n.value.dim(0), cols = n.value.dim(1);
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < rows; ++i) {
                for (int64_t j = 0; j < cols; ++j) ga[j * rows + i] += g[i * cols + j];
            }
            return;
        }
        case Op::TransposeLast2: {
            if (!at(n.in[0]).requires_grad) return;
            const int64_t B = n.value.dim(0), m = n.value.dim(1), k = n.value.dim(2);
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t b = 0; b < B; ++b) {
                const double* gb = g + b * m * k;
                double* gab = ga + b * m * k;
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < k; ++j) gab[j * m + i] += gb[i * k + j];
                }
            }
            return;
        }
        case Op::Softmax: {
            if (!at(n.in[0]).requires_grad) return;
            const int64_t d = n.value.dim(n.value.rank() - 1);
            const int64_t rows = size / d;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = n.value.data() + r * d;
                const double* gr = g + r * d;
                double dot = 0.0;
                for (int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
                for (int64_t i = 0; i < d; ++i) ga[r * d + i] += y[i] * (gr[i] - dot);
            }
            return;
        }
        case Op::LayerNorm: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            const int64_t d = n.value.dim(n.value.rank() - 1);
            const int64_t rows = size / d;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* x = ta.data() + r * d;
                const double* y = n.value.data() + r * d;
                const double* gr = g + r * d;
                double mean = 0.0;
                for (int64_t i = 0; i < d; ++i) mean += x[i];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (int64_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
                var /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(var + n.x0);
                double gmean = 0.0, gydot = 0.0;
                for (int64_t i = 0; i < d; ++i) {
                    gmean += gr[i];
                    gydot += gr[i] * y[i];
                }
                gmean /= static_cast<double>(d);
                gydot /= static_cast<double>(d);
                for (int64_t i = 0; i < d; ++i) {
                    ga[r * d + i] += inv * (gr[i] - gmean - y[i] * gydot);
                }
            }
            return;
        }
        case Op::Sum: {
            if (!at(n.in[0]).requires_grad) return;
            Tensor& ga = grad_buf(n.in[0]);
            const double gv = g[0];
            for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gv;
            return;
        }
        case Op::Mean: {
            if (!at(n.in[0]).requires_grad) return;
            Tensor& ga = grad_buf(n.in[0]);
            const double gv = g[0] / static_cast<double>(ga.size());
            for (int64_t i = 0; i < ga.size(); ++i) ga[i] += gv;
            return;
        }
        case Op::SumAxis: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            const int64_t rows = ta.dim(0), cols = ta.dim(1);
            double* ga = grad_buf(n.in[0]).data();
            if (n.i0 == 0) {
                for (int64_t i = 0; i < rows; ++i) {
                    for (int64_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j];
                }
            } else {
                for (int64_t i = 0; i < rows; ++i) {
                    for (int64_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i];
                }
            }
            return;
        }
        case Op::Frobenius: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            const double f = n.value[0];
            const double scale = g[0] / std::max(f, 1e-300);
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < ta.size(); ++i) ga[i] += scale * ta[i];
            return;
        }
        case Op::Reshape: {
            if (!at(n.in[0]).requires_grad) return;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t i = 0; i < size; ++i) ga[i] += g[i];
            return;
        }
        case Op::Slice: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            const int64_t axis = n.i0, start = n.i1, len = n.i2;
            int64_t outer = 1, inner = 1;
            for (int64_t i = 0; i < axis; ++i) outer *= ta.dim(i);
            for (int64_t i = axis + 1; i < ta.rank(); ++i) inner *= ta.dim(i);
            const int64_t in_axis = ta.dim(axis);
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t k = 0; k < len; ++k) {
                    const double* src = g + (o * len + k) * inner;
                    double* dst = ga + (o * in_axis + start + k) * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
            }
            return;
        }
        case Op::Concat: {
            const int64_t axis = n.i0;
            int64_t outer = 1, inner = 1;
            for (int64_t i = 0; i < axis; ++i) outer *= n.value.dim(i);
            for (int64_t i = axis + 1; i < n.value.rank(); ++i) inner *= n.value.dim(i);
            const int64_t total = n.value.dim(axis);
            int64_t offset = 0;
            for (NodeId p : n.in) {
                const Tensor& tp = at(p).value;
                const int64_t len = tp.dim(axis);
                if (at(p).requires_grad) {
                    double* gp = grad_buf(p).data();
                    for (int64_t o = 0; o < outer; ++o) {
                        const double* src = g + (o * total + offset) * inner;
                        double* dst = gp + o * len * inner;
                        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                    }
                }
                offset += len;
            }
            return;
        }
        case Op::RepeatRows: {
            if (!at(n.in[0]).requires_grad) return;
            const int64_t nrep = n.i0;
            Tensor& ga = grad_buf(n.in[0]);
            const int64_t chunk = ga.size();
            for (int64_t r = 0; r < nrep; ++r) {
                const double* src = g + r * chunk;
                for (int64_t i = 0; i < chunk; ++i) ga[i] += src[i];
            }
            return;
        }
        case Op::Im2Col: {
            if (!at(n.in[0]).requires_grad) return;
            const Tensor& ta = at(n.in[0]).value;
            const int64_t B = ta.dim(0), C = ta.dim(1), H = ta.dim(2), W = ta.dim(3);
            const int64_t kh = n.i0, kw = n.i1, stride = n.i2, pad = n.i3;
            const int64_t oh = (H + 2 * pad - kh) / stride + 1;
            const int64_t ow = (W + 2 * pad - kw) / stride + 1;
            const int64_t patch = C * kh * kw;
            double* ga = grad_buf(n.in[0]).data();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t oi = 0; oi < oh; ++oi) {
                    for (int64_t oj = 0; oj < ow; ++oj) {
                        const double* src = g + (b * oh * ow + oi * ow + oj) * patch;
                        for (int64_t c = 0; c < C; ++c) {
                            for (int64_t ki = 0; ki < kh; ++ki) {
                                const int64_t y = oi * stride - pad + ki;
                                if (y < 0 || y >= H) continue;
                                for (int64_t kj = 0; kj < kw; ++kj) {
                                    const int64_t x = oj * stride - pad + kj;
                                    if (x < 0 || x >= W) continue;
                                    ga[((b * C + c) * H + y) * W + x] += src[c * kh * kw + ki * kw + kj];
                                }
                            }
                        }
                    }
                }
            }
            return;
        }
        case Op::ThresholdST: {
            const Tensor& tx = at(n.in[0]).value;
            const double L = at(n.in[1]).value[0];
            const double tau = n.x0;
            if (at(n.in[0]).requires_grad) {
                double* gx = grad_buf(n.in[0]).data();
                for (int64_t i = 0; i < size; ++i) {
                    if (tx[i] > L) gx[i] += g[i];
                }
            }
            if (at(n.in[1]).requires_grad) {
                double acc = 0.0;
                for (int64_t i = 0; i < size; ++i) {
                    const double s = stable_sigmoid((tx[i] - L) / tau);
                    acc += g[i] * (-tx[i] * s * (1.0 - s) / tau);
                }
                grad_buf(n.in[1])[0] += acc;
            }
            return;
        }
    }
}

void Graph::backward(NodeId root) {
    if (root < 0 || root >= static_cast<NodeId>(nodes_.size())) {
        throw Error("backward: root node does not exist");
    }
    Node& rn = at(root);
    if (rn.value.size() != 1) {
        throw ShapeError("backward: root must be a scalar, got " + shape_str(rn.value.shape()));
    }
    // clear any previous sweep
    for (auto& n : nodes_) {
        if (!n.grad.empty()) n.grad.fill(0.0);
    }
    if (!rn.requires_grad) return;
    grad_buf(root)[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = at(id);
        if (!n.requires_grad || n.grad.empty()) continue;
        backward_node(id);
    }
    // fold gradients into bound parameters
    for (NodeId id = 0; id <= root; ++id) {
        Node& n = at(id);
        if (n.op == Op::Param && n.bound != nullptr && !n.grad.empty()) {
            for (int64_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
}

} // namespace modalmend
