#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bmoe/rng.hpp"
#include "bmoe/tensor.hpp"

namespace bmoe {

template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
using ParamList = std::vector<NamedParam<S>>;

template <typename S>
std::size_t parameter_count(const ParamList<S>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

template <typename S>
void zero_grads(const ParamList<S>& params) {
    for (auto p : params) p.tensor.zero_grad();
}

template <typename S>
Tensor<S> param_zeros(Shape shape) {
    return Tensor<S>::zeros(std::move(shape), true);
}

template <typename S>
Tensor<S> param_full(Shape shape, S value) {
    return Tensor<S>::full(std::move(shape), value, true);
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
template <typename S>
Tensor<S> param_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<S> data(numel(shape));
    for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>(std::move(shape), std::move(data), true);
}

/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)): keeps activation variance
/// roughly constant through rectifier-like layers without normalisation.
template <typename S>
Tensor<S> param_kaiming(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<S> data(numel(shape));
    for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>(std::move(shape), std::move(data), true);
}

/// Copies parameter values between two lists with matching names and shapes.
template <typename Dst, typename Src>
void copy_values(const ParamList<Dst>& dst, const ParamList<Src>& src) {
    if (dst.size() != src.size()) throw ContractError("copy_values: parameter lists differ in length");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape()) {
            throw DimensionError("copy_values: parameter " + dst[i].name + " does not match " + src[i].name);
        }
        auto t = dst[i].tensor;
        auto& out = t.mutable_data();
        const auto& in = src[i].tensor.data();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<Dst>(in[j]);
    }
}

}  // namespace bmoe
