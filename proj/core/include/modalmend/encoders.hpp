#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modalmend/attention.hpp"
#include "modalmend/graph.hpp"

namespace modalmend {

enum class ModalityKind { Vector, Sequence, Grid };

std::string kind_str(ModalityKind k);
ModalityKind kind_from_str(const std::string& s);

struct ModalityMeta {
    std::string name;
    ModalityKind kind = ModalityKind::Vector;
    // Vector: {D}; Sequence: {T, D}; Grid: {C, H, W}
    Shape dims;

    int64_t row_size() const { return shape_numel(dims); }
    int64_t seq_len() const { return kind == ModalityKind::Sequence ? dims[0] : 1; }
};

// Raw per-modality inputs for one batch of patients. Rows with
// present=false hold the canonical all-zero placeholder and are never read
// as data by anything downstream of the presence mask.
struct ModalityBatch {
    int modality_id = 0;
    Tensor values;                 // [B, ...dims]
    std::vector<uint8_t> present;  // length B
};

struct EncodedModality {
    NodeId tokens = -1;   // [B, T, N_h]; T = 1 except for sequences
    NodeId summary = -1;  // [B, N_h]; for sequences this is the final token
};

struct EncoderConfig {
    int64_t n_h = 128;
    int heads = 4;
    int seq_layers = 2;
    std::vector<int64_t> grid_channels = {8, 16};
};

// Eq-style unimodal representation extraction. The three families share the
// output contract (tokens + summary of common width n_h); the backbone
// depends on the modality kind. Deterministic, row-independent.
class Encoder {
public:
    Encoder(const ModalityMeta& meta, const EncoderConfig& cfg, ParamStore& store, const std::string& prefix,
            Rng& rng);

    EncodedModality encode(Graph& g, const Tensor& values) const;

    const ModalityMeta& meta() const { return meta_; }

private:
    ModalityMeta meta_;
    EncoderConfig cfg_;

    // vector backbone
    Parameter* v_w1 = nullptr;
    Parameter* v_w2 = nullptr;

    // sequence backbone
    Parameter* s_proj = nullptr;
    Tensor s_pe;
    std::vector<AttentionLayerParams> s_layers;

    // grid backbone
    struct ConvLayer {
        Parameter* w = nullptr;  // [Cin*kh*kw, Cout]
        int64_t cin = 0, cout = 0, oh = 0, ow = 0;
    };
    std::vector<ConvLayer> g_convs;
    Parameter* g_proj = nullptr;
};

} // namespace modalmend
