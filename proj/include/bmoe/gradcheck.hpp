#pragma once

// Central finite differences as an independent check on backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bmoe/params.hpp"
#include "bmoe/tensor.hpp"

namespace bmoe {

/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate of every tensor.
template <typename S>
std::vector<std::vector<S>> finite_difference_gradient(const std::function<S()>& f, const std::vector<Tensor<S>>& params,
                                                       S eps = S(1e-5)) {
    if (!(eps > S(0))) throw ContractError("finite_difference_gradient: eps must be positive");
    NoGradGuard guard;
    std::vector<std::vector<S>> out;
    out.reserve(params.size());
    for (auto p : params) {
        auto& data = p.mutable_data();
        std::vector<S> grad(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const S saved = data[i];
            data[i] = saved + eps;
            const S up = f();
            data[i] = saved - eps;
            const S down = f();
            data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw ContractError("finite_difference_gradient: non-finite objective at perturbed point");
            }
            grad[i] = (up - down) / (S(2) * eps);
        }
        out.push_back(std::move(grad));
    }
    return out;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero components
/// from dominating through finite-difference round-off.
template <typename S>
S relative_error(S a, S b, S floor = S(1e-6)) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename S>
struct GradCheckReport {
    std::string name;
    S max_relative_error = S(0);
    std::size_t coordinates = 0;
    bool passed(S tolerance) const { return max_relative_error < tolerance; }
};

/// Compares backward() against finite differences for every coordinate of
/// `wrt`. `loss` must rebuild the graph from the current tensor values.
template <typename S>
GradCheckReport<S> check_gradients(const std::string& name, const std::function<Tensor<S>()>& loss,
                                   const std::vector<Tensor<S>>& wrt, S eps = S(1e-5)) {
    for (auto t : wrt) t.zero_grad();
    backward(loss());
    std::vector<std::vector<S>> analytic;
    for (const auto& t : wrt) analytic.push_back(t.grad());
    const auto numeric = finite_difference_gradient<S>([&] { return loss().item(); }, wrt, eps);
    GradCheckReport<S> report{name};
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        for (std::size_t i = 0; i < analytic[k].size(); ++i) {
            report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[k][i], numeric[k][i]));
            ++report.coordinates;
        }
    }
    return report;
}

template <typename S>
std::vector<Tensor<S>> tensors_of(const ParamList<S>& params) {
    std::vector<Tensor<S>> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

}  // namespace bmoe
