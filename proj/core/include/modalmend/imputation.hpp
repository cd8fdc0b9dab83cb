#pragma once

#include <vector>

#include "modalmend/graph.hpp"

namespace modalmend {

struct GcnParams {
    Parameter* w0 = nullptr;  // [N_h, N_h]
    Parameter* w1 = nullptr;  // [N_h, N_h]
};

struct GateParams {
    Parameter* wo = nullptr;  // [N_h, 1], gate on own representation
    Parameter* ws = nullptr;  // [N_h, 1], gate on neighbor aggregate
};

GcnParams make_gcn(ParamStore& store, const std::string& prefix, int64_t n_h, Rng& rng);
GateParams make_gates(ParamStore& store, const std::string& prefix, int64_t n_h, Rng& rng);

// Zeroes rows whose modality is missing so placeholder contents cannot reach
// the neighborhood aggregation. Returns the masked copy.
NodeId zero_missing_rows(Graph& g, NodeId h, const std::vector<uint8_t>& present);

// Two-layer graph convolution over the fused similarity graph:
// relu(adj * relu(adj * H0 * W0) * W1), with H0 the row-masked input.
// row_normalize optionally rescales adjacency rows to sum 1 (off by default;
// the raw similarity matrix is the documented behavior).
NodeId propagate(Graph& g, NodeId h, const std::vector<uint8_t>& present, NodeId adj, const GcnParams& p,
                 bool row_normalize = false);

struct GatePair {
    NodeId alpha = -1;  // [B,1], own-information weight, alpha+beta == 1
    NodeId beta = -1;   // [B,1]
};

GatePair compute_gates(Graph& g, NodeId h0, NodeId aggregated, const GateParams& p);

// Missing rows take the aggregated row verbatim; present rows take the
// convex gate combination alpha*h + beta*aggregated.
NodeId impute(Graph& g, NodeId h0, NodeId aggregated, const GatePair& gates, const std::vector<uint8_t>& present);

} // namespace modalmend
