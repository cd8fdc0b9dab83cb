#include "modalmend/fusion.hpp"

#include <cmath>

#include "modalmend/errors.hpp"

namespace modalmend {

Tensor presence_mask_matrix(const std::vector<uint8_t>& present) {
    const int64_t b = static_cast<int64_t>(present.size());
    Tensor mask({b, b});
    for (int64_t i = 0; i < b; ++i) {
        if (!present[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < b; ++j) {
            if (present[static_cast<size_t>(j)]) mask[i * b + j] = 1.0;
        }
    }
    return mask;
}

FusionParams make_fusion(ParamStore& store, const std::string& prefix, double threshold_init, double epsilon,
                         double tau) {
    if (threshold_init <= 0.0 || threshold_init >= 1.0) throw ConfigError("fusion: threshold init must lie in (0,1)");
    if (epsilon <= 0.0) throw ConfigError("fusion: epsilon must be positive");
    FusionParams p;
    p.threshold_raw =
        store.create_const(prefix + ".threshold_raw", {}, std::log(threshold_init / (1.0 - threshold_init)));
    p.epsilon = epsilon;
    p.tau = tau;
    return p;
}

NodeId fuse_similarities(Graph& g, const std::vector<NodeId>& sims, const std::vector<Tensor>& masks,
                         double epsilon) {
    if (sims.empty() || sims.size() != masks.size()) {
        throw ShapeError("fuse_similarities: " + std::to_string(sims.size()) + " similarity matrices vs " +
                         std::to_string(masks.size()) + " masks");
    }
    const Shape& shape = g.value(sims[0]).shape();
    Tensor denom(shape);
    for (const Tensor& m : masks) {
        if (m.shape() != shape) {
            throw ShapeError("fuse_similarities: mask shape " + shape_str(m.shape()) + " does not match " +
                             shape_str(shape));
        }
        for (int64_t i = 0; i < denom.size(); ++i) denom[i] += m[i];
    }
    for (int64_t i = 0; i < denom.size(); ++i) denom[i] += epsilon;

    NodeId numer = -1;
    for (size_t m = 0; m < sims.size(); ++m) {
        if (g.value(sims[m]).shape() != shape) {
            throw ShapeError("fuse_similarities: similarity shape " + shape_str(g.value(sims[m]).shape()) +
                             " does not match " + shape_str(shape));
        }
        NodeId term = g.mul(sims[m], g.constant(masks[m]));
        numer = (numer < 0) ? term : g.add(numer, term);
    }
    return g.div(numer, g.constant(denom));
}

ThresholdResult apply_threshold(Graph& g, NodeId fused_raw, const FusionParams& p) {
    ThresholdResult out;
    out.threshold = g.sigmoid(g.param(*p.threshold_raw));
    out.matrix = g.threshold_st(fused_raw, out.threshold, p.tau);
    return out;
}

} // namespace modalmend
