#pragma once

#include <span>
#include <string>
#include <vector>

#include "modalmend/graph.hpp"

namespace modalmend {

// Plain RBF kernel value exp(-||a-b||^2 / (2 sigma^2)). Throws on sigma <= 0.
double rbf(std::span<const double> a, std::span<const double> b, double sigma);

struct BandwidthResult {
    double sigma = 1.0;
    bool degenerate = false;  // <2 valid rows or zero mean distance
};

// sigma = fraction * mean pairwise Euclidean distance over valid rows,
// guarded to 1 on degenerate batches.
BandwidthResult bandwidth_from_batch(const Tensor& h, const std::vector<uint8_t>& valid, double fraction);

// Learned kernel over a batch: a two-layer feature map, a blend scalar kept
// in (0,1) by a sigmoid, and two RBF factors with batch-derived bandwidths.
struct DeepKernelParams {
    Parameter* phi_w1 = nullptr;   // [N_h, N_h]
    Parameter* phi_w2 = nullptr;   // [N_h, N_h]
    Parameter* delta_raw = nullptr;  // scalar, delta = sigmoid(delta_raw)
    double bandwidth_fraction_k = 0.5;
    double bandwidth_fraction_q = 1.0;
};

DeepKernelParams make_deep_kernel(ParamStore& store, const std::string& prefix, int64_t n_h, double delta_init,
                                  double fraction_k, double fraction_q, Rng& rng);

struct KernelResult {
    NodeId matrix = -1;   // [B,B], symmetric, entries in [0,1], unit diagonal
    NodeId phi_out = -1;  // [B,N_h] mapped features (input to the stability term)
    double sigma_k = 1.0;
    double sigma_q = 1.0;
    bool degenerate_bandwidth = false;
};

// Pi[i,j] = [(1-delta) k(phi(h_i), phi(h_j)) + delta] q(h_i, h_j).
// Bandwidths are computed from valid rows only and treated as constants.
// All pairs are computed; rows for invalid entries get masked downstream.
KernelResult deep_kernel_matrix(Graph& g, NodeId h, const std::vector<uint8_t>& valid, const DeepKernelParams& p);

// Squared Euclidean distances between rows of a [B,D] node; exact zeros on
// the diagonal.
NodeId pairwise_sqdist(Graph& g, NodeId h);

NodeId rbf_matrix(Graph& g, NodeId h, double sigma);

// (1 + cos)/2 similarity of rows, zero rows treated as unit-norm-guarded.
NodeId cosine_similarity_matrix(Graph& g, NodeId h);

// | ||phi(H)||_F - ||H||_F | restricted to valid rows.
NodeId stability_term(Graph& g, NodeId h, NodeId phi_out, const std::vector<uint8_t>& valid);

} // namespace modalmend
