#pragma once

#include <string>
#include <vector>

#include "modalmend/attention.hpp"
#include "modalmend/encoders.hpp"
#include "modalmend/graph.hpp"

namespace modalmend {

enum class TokenMode { Sequence, Summary };

std::string token_mode_str(TokenMode m);
TokenMode token_mode_from_str(const std::string& s);

struct InteractionParams {
    std::vector<AttentionLayerParams> layers;
    std::vector<Parameter*> type_embeddings;  // one [N_h] vector per modality
    Parameter* cls_token = nullptr;           // [N_h]
    Parameter* w_final = nullptr;             // [N_h, |C|]
    int heads = 4;
};

InteractionParams make_interaction(ParamStore& store, const std::string& prefix, int64_t n_h, int layers, int heads,
                                   int64_t n_modalities, int64_t n_labels, Rng& rng);

// What each modality brings to the token sequence.
struct TokenSource {
    ModalityKind kind = ModalityKind::Vector;
    NodeId final_rep = -1;                        // [B, N_h] imputed/enhanced summary
    NodeId enc_tokens = -1;                       // [B, T, N_h]; sequences only
    const std::vector<uint8_t>* present = nullptr;
    int64_t seq_len = 1;
};

struct FusionInput {
    NodeId tokens = -1;                  // [B, T_total, N_h], classification token first
    std::vector<int> token_modality_ids;  // length T_total; -1 marks the classification token
};

// Token layout. Summary mode: one token per modality (the final imputed
// vector). Sequence mode: a sequential modality occupies its full T slots --
// encoder tokens (rows of absent patients zeroed) plus positions, with the
// last slot replaced by the imputed summary; other kinds contribute one
// token. Every slot receives its modality's type embedding; the learned
// classification token is prepended.
FusionInput assemble(Graph& g, const std::vector<TokenSource>& sources, const InteractionParams& p, TokenMode mode);

struct InteractTrace {
    NodeId output = -1;                            // [B, T_total, N_h]
    std::vector<std::vector<NodeId>> attention;    // [layer][head] -> [B,T,T]
};

InteractTrace interact(Graph& g, NodeId tokens, const InteractionParams& p);

// Probabilities from the classification token: sigmoid(z[:,0,:] W_final),
// independent per label.
NodeId predict(Graph& g, NodeId z, const InteractionParams& p);

} // namespace modalmend
