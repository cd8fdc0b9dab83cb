#include "modalmend/encoders.hpp"

#include "modalmend/errors.hpp"

namespace modalmend {

std::string kind_str(ModalityKind k) {
    switch (k) {
        case ModalityKind::Vector: return "vector";
        case ModalityKind::Sequence: return "sequence";
        case ModalityKind::Grid: return "grid";
    }
    return "?";
}

ModalityKind kind_from_str(const std::string& s) {
    if (s == "vector") return ModalityKind::Vector;
    if (s == "sequence") return ModalityKind::Sequence;
    if (s == "grid") return ModalityKind::Grid;
    throw ConfigError("unknown modality kind '" + s + "'");
}

namespace {

constexpr int64_t kConvKernel = 3;
constexpr int64_t kConvStride = 2;
constexpr int64_t kConvPad = 1;

int64_t conv_out(int64_t in) { return (in + 2 * kConvPad - kConvKernel) / kConvStride + 1; }

} // namespace

Encoder::Encoder(const ModalityMeta& meta, const EncoderConfig& cfg, ParamStore& store, const std::string& prefix,
                 Rng& rng)
    : meta_(meta), cfg_(cfg) {
    switch (meta_.kind) {
        case ModalityKind::Vector: {
            const int64_t d = meta_.dims[0];
            v_w1 = store.create(prefix + ".w1", {d, cfg_.n_h}, d, rng);
            v_w2 = store.create(prefix + ".w2", {cfg_.n_h, cfg_.n_h}, cfg_.n_h, rng);
            break;
        }
        case ModalityKind::Sequence: {
            const int64_t t = meta_.dims[0];
            const int64_t d = meta_.dims[1];
            s_proj = store.create(prefix + ".proj", {d, cfg_.n_h}, d, rng);
            s_pe = sinusoidal_encoding(t, cfg_.n_h);
            for (int l = 0; l < cfg_.seq_layers; ++l) {
                s_layers.push_back(make_attention_layer(store, prefix + ".layer" + std::to_string(l), cfg_.n_h, rng));
            }
            break;
        }
        case ModalityKind::Grid: {
            int64_t c = meta_.dims[0];
            int64_t h = meta_.dims[1];
            int64_t w = meta_.dims[2];
            int idx = 0;
            for (int64_t cout : cfg_.grid_channels) {
                ConvLayer layer;
                layer.cin = c;
                layer.cout = cout;
                layer.oh = conv_out(h);
                layer.ow = conv_out(w);
                if (layer.oh < 1 || layer.ow < 1) {
                    throw ShapeError("grid encoder: input " + shape_str(meta_.dims) + " too small for conv stack");
                }
                const int64_t fan = c * kConvKernel * kConvKernel;
                layer.w = store.create(prefix + ".conv" + std::to_string(idx), {fan, cout}, fan, rng);
                g_convs.push_back(layer);
                c = cout;
                h = layer.oh;
                w = layer.ow;
                ++idx;
            }
            const int64_t flat = c * h * w;
            g_proj = store.create(prefix + ".proj", {flat, cfg_.n_h}, flat, rng);
            break;
        }
    }
}

EncodedModality Encoder::encode(Graph& g, const Tensor& values) const {
    EncodedModality out;
    switch (meta_.kind) {
        case ModalityKind::Vector: {
            if (values.rank() != 2 || values.dim(1) != meta_.dims[0]) {
                throw ShapeError("encode(" + meta_.name + "): vector batch must be [B," +
                                 std::to_string(meta_.dims[0]) + "], got " + shape_str(values.shape()));
            }
            const int64_t b = values.dim(0);
            NodeId x = g.constant(values);
            NodeId h = g.matmul(g.relu(g.matmul(x, g.param(*v_w1))), g.param(*v_w2));
            out.summary = h;
            out.tokens = g.reshape(h, {b, 1, cfg_.n_h});
            break;
        }
        case ModalityKind::Sequence: {
            if (values.rank() != 3 || values.dim(1) != meta_.dims[0] || values.dim(2) != meta_.dims[1]) {
                throw ShapeError("encode(" + meta_.name + "): sequence batch must be [B," +
                                 std::to_string(meta_.dims[0]) + "," + std::to_string(meta_.dims[1]) + "], got " +
                                 shape_str(values.shape()));
            }
            const int64_t b = values.dim(0);
            const int64_t t = meta_.dims[0];
            NodeId x = g.matmul(g.constant(values), g.param(*s_proj));
            x = g.add(x, g.constant(s_pe));  // positions broadcast over the batch
            for (const auto& layer : s_layers) {
                x = transformer_layer(g, x, layer, cfg_.heads).output;
            }
            out.tokens = x;
            out.summary = g.reshape(g.slice(x, 1, t - 1, 1), {b, cfg_.n_h});
            break;
        }
        case ModalityKind::Grid: {
            if (values.rank() != 4 || values.dim(1) != meta_.dims[0] || values.dim(2) != meta_.dims[1] ||
                values.dim(3) != meta_.dims[2]) {
                throw ShapeError("encode(" + meta_.name + "): grid batch must be [B," + shape_str(meta_.dims) +
                                 "], got " + shape_str(values.shape()));
            }
            const int64_t b = values.dim(0);
            NodeId x = g.constant(values);
            for (const auto& layer : g_convs) {
                NodeId cols = g.im2col(x, kConvKernel, kConvKernel, kConvStride, kConvPad);
                NodeId mapped = g.relu(g.matmul(cols, g.param(*layer.w)));     // [B, OH*OW, Cout]
                x = g.reshape(g.transpose_last2(mapped), {b, layer.cout, layer.oh, layer.ow});
            }
            const Tensor& tx = g.value(x);
            const int64_t flat = tx.dim(1) * tx.dim(2) * tx.dim(3);
            NodeId h = g.matmul(g.reshape(x, {b, flat}), g.param(*g_proj));
            out.summary = h;
            out.tokens = g.reshape(h, {b, 1, cfg_.n_h});
            break;
        }
    }
    return out;
}

} // namespace modalmend
