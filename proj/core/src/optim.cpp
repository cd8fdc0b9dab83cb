#include "modalmend/optim.hpp"

#include <cmath>

#include "modalmend/errors.hpp"

namespace modalmend {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
    moments_.reserve(params_.size());
    for (Parameter* p : params_) {
        moments_.push_back({Tensor(p->value.shape()), Tensor(p->value.shape())});
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        Moments& mo = moments_[k];
        for (int64_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            if (std::isnan(g)) {
                throw NumericError("adam: NaN gradient in parameter '" + p.name + "'");
            }
            mo.first[i] = cfg_.beta1 * mo.first[i] + (1.0 - cfg_.beta1) * g;
            mo.second[i] = cfg_.beta2 * mo.second[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mo.first[i] / bc1;
            const double vhat = mo.second[i] / bc2;
            p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (Parameter* p : params) {
        for (int64_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Parameter* p : params) {
            for (int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
        }
    }
    return norm;
}

} // namespace modalmend
