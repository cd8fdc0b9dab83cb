#pragma once

#include <vector>

#include "modalmend/graph.hpp"

namespace modalmend {

// mask[i,j] = present[i] && present[j], as a 0/1 matrix.
Tensor presence_mask_matrix(const std::vector<uint8_t>& present);

struct FusionParams {
    Parameter* threshold_raw = nullptr;  // Lambda = sigmoid(threshold_raw)
    double epsilon = 1e-8;
    double tau = 0.1;  // straight-through temperature
};

FusionParams make_fusion(ParamStore& store, const std::string& prefix, double threshold_init, double epsilon,
                         double tau);

// Mask-weighted average of the per-modality similarity matrices:
// fused[i,j] = sum_m sim_m[i,j]*mask_m[i,j] / (sum_m mask_m[i,j] + epsilon).
// Pairs sharing no modality end up at ~0 (zero numerator).
NodeId fuse_similarities(Graph& g, const std::vector<NodeId>& sims, const std::vector<Tensor>& masks,
                         double epsilon);

struct ThresholdResult {
    NodeId matrix = -1;     // entries are exactly 0 or strictly greater than Lambda
    NodeId threshold = -1;  // scalar node holding Lambda
};

// Hard filter: keep entries strictly above the learned threshold, zero the
// rest. Gradients flow straight-through (see Graph::threshold_st).
ThresholdResult apply_threshold(Graph& g, NodeId fused_raw, const FusionParams& p);

} // namespace modalmend
