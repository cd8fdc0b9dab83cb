#pragma once

#include <cstdint>
#include <vector>

#include "modalmend/graph.hpp"

namespace modalmend {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter set.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);

    // Applies one update from the gradients currently stored on the
    // parameters. Throws NumericError naming the parameter on NaN gradients.
    void step();
    void zero_grad();
    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moments {
        Tensor first;
        Tensor second;
    };
    std::vector<Parameter*> params_;
    std::vector<Moments> moments_;
    AdamConfig cfg_;
    int64_t step_count_ = 0;
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

} // namespace modalmend
