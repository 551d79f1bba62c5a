#pragma once

#include <string>

#include "bmoe/ops.hpp"
#include "bmoe/params.hpp"

namespace bmoe::nn {

template <typename S>
struct Linear {
    Tensor<S> weight;  // [in x out]
    Tensor<S> bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(param_uniform<S>({in, out}, in, rng)), bias(param_zeros<S>({out})) {}

    static Linear zeros(std::size_t in, std::size_t out) {
        Linear l;
        l.weight = param_zeros<S>({in, out});
        l.bias = param_zeros<S>({out});
        return l;
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct LayerNorm {
    Tensor<S> gamma;
    Tensor<S> beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width) : gamma(param_full<S>({width}, S(1))), beta(param_zeros<S>({width})) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

}  // namespace bmoe::nn
