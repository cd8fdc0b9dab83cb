#include "modalmend/attention.hpp"

#include <cmath>

#include "modalmend/errors.hpp"

namespace modalmend {

AttentionLayerParams make_attention_layer(ParamStore& store, const std::string& prefix, int64_t width, Rng& rng) {
    AttentionLayerParams p;
    p.wq = store.create(prefix + ".wq", {width, width}, width, rng);
    p.wk = store.create(prefix + ".wk", {width, width}, width, rng);
    p.wv = store.create(prefix + ".wv", {width, width}, width, rng);
    p.wo = store.create(prefix + ".wo", {width, width}, width, rng);
    p.ff1 = store.create(prefix + ".ff1", {width, 4 * width}, width, rng);
    p.ff2 = store.create(prefix + ".ff2", {4 * width, width}, 4 * width, rng);
    return p;
}

AttentionTrace transformer_layer(Graph& g, NodeId x, const AttentionLayerParams& p, int heads) {
    const Tensor& tx = g.value(x);
    if (tx.rank() != 3) throw ShapeError("transformer_layer: expected [B,T,D] input, got " + shape_str(tx.shape()));
    const int64_t d = tx.dim(2);
    if (heads < 1 || d % heads != 0) {
        throw ShapeError("transformer_layer: head count " + std::to_string(heads) + " must divide width " +
                         std::to_string(d));
    }
    const int64_t dk = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    NodeId q = g.matmul(x, g.param(*p.wq));
    NodeId k = g.matmul(x, g.param(*p.wk));
    NodeId v = g.matmul(x, g.param(*p.wv));

    AttentionTrace trace;
    std::vector<NodeId> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        NodeId qh = g.slice(q, 2, h * dk, dk);
        NodeId kh = g.slice(k, 2, h * dk, dk);
        NodeId vh = g.slice(v, 2, h * dk, dk);
        NodeId scores = g.affine(g.matmul(qh, g.transpose_last2(kh)), scale, 0.0);
        NodeId attn = g.softmax(scores);
        trace.head_attn.push_back(attn);
        head_out.push_back(g.matmul(attn, vh));
    }
    NodeId mhsa = g.matmul(g.concat(head_out, 2), g.param(*p.wo));
    NodeId mid = g.layer_norm(g.add(x, mhsa));
    NodeId ffn = g.matmul(g.relu(g.matmul(mid, g.param(*p.ff1))), g.param(*p.ff2));
    trace.output = g.layer_norm(g.add(mid, ffn));
    return trace;
}

Tensor sinusoidal_encoding(int64_t len, int64_t width) {
    Tensor pe({len, width});
    for (int64_t t = 0; t < len; ++t) {
        for (int64_t i = 0; i < width; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
            const double angle = static_cast<double>(t) * freq;
            pe.at({t, i}) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

} // namespace modalmend
