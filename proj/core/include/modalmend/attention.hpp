#pragma once

#include <string>
#include <vector>

#include "modalmend/graph.hpp"

namespace modalmend {

// One post-norm transformer layer: multi-head self-attention with residual
// and layer norm, then a feed-forward block (hidden 4x width) with residual
// and layer norm. No bias terms anywhere.
struct AttentionLayerParams {
    Parameter* wq;
    Parameter* wk;
    Parameter* wv;
    Parameter* wo;
    Parameter* ff1;
    Parameter* ff2;
};

AttentionLayerParams make_attention_layer(ParamStore& store, const std::string& prefix, int64_t width, Rng& rng);

struct AttentionTrace {
    NodeId output;                  // [B,T,D]
    std::vector<NodeId> head_attn;  // per head, [B,T,T] softmax weights
};

// x: [B,T,D]; heads must divide D.
AttentionTrace transformer_layer(Graph& g, NodeId x, const AttentionLayerParams& p, int heads);

// Standard sin/cos positional table, shape [len, width].
Tensor sinusoidal_encoding(int64_t len, int64_t width);

} // namespace modalmend
