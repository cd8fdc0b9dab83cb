#include "modalmend/imputation.hpp"

#include "modalmend/errors.hpp"

namespace modalmend {

GcnParams make_gcn(ParamStore& store, const std::string& prefix, int64_t n_h, Rng& rng) {
    GcnParams p;
    p.w0 = store.create(prefix + ".w0", {n_h, n_h}, n_h, rng);
    p.w1 = store.create(prefix + ".w1", {n_h, n_h}, n_h, rng);
    return p;
}

GateParams make_gates(ParamStore& store, const std::string& prefix, int64_t n_h, Rng& rng) {
    GateParams p;
    p.wo = store.create(prefix + ".wo", {n_h, 1}, n_h, rng);
    p.ws = store.create(prefix + ".ws", {n_h, 1}, n_h, rng);
    return p;
}

namespace {

Tensor presence_column(const std::vector<uint8_t>& present) {
    Tensor col({static_cast<int64_t>(present.size()), 1});
    for (size_t i = 0; i < present.size(); ++i) col[static_cast<int64_t>(i)] = present[i] ? 1.0 : 0.0;
    return col;
}

} // namespace

NodeId zero_missing_rows(Graph& g, NodeId h, const std::vector<uint8_t>& present) {
    const Tensor& th = g.value(h);
    if (th.rank() != 2 || th.dim(0) != static_cast<int64_t>(present.size())) {
        throw ShapeError("zero_missing_rows: [B,D] tensor " + shape_str(th.shape()) + " vs " +
                         std::to_string(present.size()) + " presence flags");
    }
    return g.mul(h, g.constant(presence_column(present)));
}

NodeId propagate(Graph& g, NodeId h, const std::vector<uint8_t>& present, NodeId adj, const GcnParams& p,
                 bool row_normalize) {
    const Tensor& th = g.value(h);
    const Tensor& ta = g.value(adj);
    if (ta.rank() != 2 || ta.dim(0) != ta.dim(1) || ta.dim(0) != th.dim(0)) {
        throw ShapeError("propagate: adjacency " + shape_str(ta.shape()) + " incompatible with representations " +
                         shape_str(th.shape()));
    }
    NodeId h0 = zero_missing_rows(g, h, present);
    NodeId a = adj;
    if (row_normalize) {
        NodeId deg = g.affine(g.sum_axis(adj, 1), 1.0, 1e-8);
        a = g.div(adj, deg);
    }
    NodeId inner = g.relu(g.matmul(g.matmul(a, h0), g.param(*p.w0)));
    return g.relu(g.matmul(g.matmul(a, inner), g.param(*p.w1)));
}

GatePair compute_gates(Graph& g, NodeId h0, NodeId aggregated, const GateParams& p) {
    NodeId alpha_raw = g.sigmoid(g.matmul(h0, g.param(*p.wo)));
    NodeId beta_raw = g.sigmoid(g.matmul(aggregated, g.param(*p.ws)));
    GatePair gates;
    gates.alpha = g.div(alpha_raw, g.add(alpha_raw, beta_raw));
    gates.beta = g.affine(gates.alpha, -1.0, 1.0);
    return gates;
}

NodeId impute(Graph& g, NodeId h0, NodeId aggregated, const GatePair& gates, const std::vector<uint8_t>& present) {
    const Tensor pm = presence_column(present);
    Tensor pm_inv(pm.shape());
    for (int64_t i = 0; i < pm.size(); ++i) pm_inv[i] = 1.0 - pm[i];
    NodeId blended = g.add(g.mul(h0, gates.alpha), g.mul(aggregated, gates.beta));
    return g.add(g.mul(blended, g.constant(pm)), g.mul(aggregated, g.constant(pm_inv)));
}

} // namespace modalmend
