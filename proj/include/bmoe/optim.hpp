#pragma once

// SGD with momentum, coupled weight decay and a step learning-rate schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bmoe/params.hpp"

namespace bmoe {

template <typename S>
struct SgdState {
    double learning_rate = 0.00125;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::size_t> epoch_milestones{30, 60};
    double decay_factor = 10.0;
    std::map<std::string, std::vector<S>> velocity;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ContractError("sgd: learning rate must be non-negative");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("sgd: momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ContractError("sgd: weight decay must be non-negative");
        if (!(decay_factor > 0.0)) throw ContractError("sgd: decay factor must be positive");
    }

    /// Base rate divided by decay_factor once per milestone already reached.
    double lr_at(std::size_t epoch) const {
        double lr = learning_rate;
        for (std::size_t m : epoch_milestones)
            if (epoch >= m) lr /= decay_factor;
        return lr;
    }
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr(epoch) * v.
template <typename S>
void sgd_step(const ParamList<S>& params, SgdState<S>& state, std::size_t epoch) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) throw ContractError("sgd_step: parameter " + p.name + " has no gradient");
    }
    const S lr = static_cast<S>(state.lr_at(epoch));
    const S mom = static_cast<S>(state.momentum);
    const S wd = static_cast<S>(state.weight_decay);
    for (const auto& p : params) {
        auto t = p.tensor;
        auto& v = state.velocity[p.name];
        if (v.empty()) v.assign(t.size(), S(0));
        if (v.size() != t.size()) throw DimensionError("sgd_step: velocity for " + p.name + " has the wrong size");
        auto& w = t.mutable_data();
        const auto& g = t.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mom * v[i] + (g[i] + wd * w[i]);
            w[i] -= lr * v[i];
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename S>
double clip_grad_norm(const ParamList<S>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be > 0");
    double sq = 0.0;
    for (const auto& p : params)
        for (S g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const S f = static_cast<S>(max_norm / norm);
        for (const auto& p : params) {
            auto t = p.tensor;
            for (auto& g : t.mutable_grad()) g *= f;
        }
    }
    return norm;
}

}  // namespace bmoe
