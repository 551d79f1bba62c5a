#pragma once

// Macro-Micro Motion Encoder: self-attention for sequence-wide context,
// then a scalable-granularity layer for frame-level and short-window
// motion, then mean pooling over time.

#include <string>
#include <vector>

#include "bmoe/nn/blocks.hpp"

namespace bmoe {

struct M3eConfig {
    std::size_t model_dim = 32;
    std::size_t num_heads = 4;
    std::size_t sgp_window = 3;
    std::size_t sgp_scale_k = 3;
    std::size_t depth = 1;

    nn::AttentionConfig attention() const { return {model_dim, num_heads, false}; }

    void validate() const {
        attention().validate();
        if (sgp_window % 2 == 0) throw ContractError("m3e: sgp_window must be odd");
        if (sgp_scale_k < 1) throw ContractError("m3e: sgp_scale_k must be at least 1");
        if ((sgp_scale_k * sgp_window) % 2 == 0) throw ContractError("m3e: coarse window must be odd");
        if (depth < 1) throw ContractError("m3e: depth must be at least 1");
    }
};

/// out = x + instant(x) + window(x)
///
/// instant: affine(x) gated elementwise by sigmoid(affine(mean_t x)).
/// window:  sigmoid(affine(x)) * (dwconv_w(x) + dwconv_{k*w}(x)).
/// Each branch ends in a zero-initialised projection.
template <typename S>
class SgpLayer {
public:
    SgpLayer() = default;
    SgpLayer(const M3eConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t d = cfg.model_dim;
        const std::size_t fine = cfg.sgp_window;
        const std::size_t coarse = cfg.sgp_window * cfg.sgp_scale_k;
        instant_value_ = nn::Linear<S>(d, d, rng);
        instant_gate_ = nn::Linear<S>(d, d, rng);
        instant_out_ = nn::Linear<S>::zeros(d, d);
        window_gate_ = nn::Linear<S>(d, d, rng);
        fine_kernel_ = param_uniform<S>({fine, d}, fine, rng);
        fine_bias_ = param_zeros<S>({d});
        coarse_kernel_ = param_uniform<S>({coarse, d}, coarse, rng);
        coarse_bias_ = param_zeros<S>({d});
        window_out_ = nn::Linear<S>::zeros(d, d);
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        const std::size_t d = instant_value_.in_features();
        if (x.rank() != 2 || x.dim(1) != d) {
            throw DimensionError("sgp_layer: input " + shape_str(x.shape()) + " does not have width " +
                                 std::to_string(d));
        }
        const auto instant = instant_out_(mul(instant_value_(x), sigmoid(instant_gate_(mean_rows(x)))));
        const auto convs = add(depthwise_conv1d(x, fine_kernel_, fine_bias_), depthwise_conv1d(x, coarse_kernel_, coarse_bias_));
        const auto window = window_out_(mul(sigmoid(window_gate_(x)), convs));
        return add(add(x, instant), window);
    }

    const Tensor<S>& fine_kernel() const { return fine_kernel_; }
    const Tensor<S>& coarse_kernel() const { return coarse_kernel_; }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        instant_value_.collect(prefix + ".instant_value", out);
        instant_gate_.collect(prefix + ".instant_gate", out);
        instant_out_.collect(prefix + ".instant_out", out);
        window_gate_.collect(prefix + ".window_gate", out);
        out.push_back({prefix + ".fine_kernel", fine_kernel_});
        out.push_back({prefix + ".fine_bias", fine_bias_});
        out.push_back({prefix + ".coarse_kernel", coarse_kernel_});
        out.push_back({prefix + ".coarse_bias", coarse_bias_});
        window_out_.collect(prefix + ".window_out", out);
    }

private:
    nn::Linear<S> instant_value_, instant_gate_, instant_out_;
    nn::Linear<S> window_gate_, window_out_;
    Tensor<S> fine_kernel_, fine_bias_, coarse_kernel_, coarse_bias_;
};

/// Region expert backbone. A fresh encoder returns the temporal mean of
/// its input tokens exactly.
template <typename S>
class M3e {
public:
    M3e() = default;
    M3e(const M3eConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            attention_.emplace_back(cfg_.attention(), rng);
            sgp_.emplace_back(cfg_, rng);
        }
    }

    const M3eConfig& config() const { return cfg_; }

    /// Contextualised token sequence before pooling, [T x D].
    Tensor<S> encode(const Tensor<S>& tokens) const {
        if (tokens.rank() != 2) throw ContractError("m3e: expected a [T x D] token sequence");
        if (tokens.dim(1) != cfg_.model_dim) {
            throw DimensionError("m3e: tokens " + shape_str(tokens.shape()) + " do not have width " +
                                 std::to_string(cfg_.model_dim));
        }
        Tensor<S> h = tokens;
        for (std::size_t i = 0; i < cfg_.depth; ++i) h = sgp_[i](attention_[i](h));
        return h;
    }

    /// Pooled expert embedding z_k, [D].
    Tensor<S> operator()(const Tensor<S>& tokens) const { return mean_rows(encode(tokens)); }

    const std::vector<SgpLayer<S>>& sgp_layers() const { return sgp_; }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            attention_[i].collect(prefix + ".layer" + std::to_string(i) + ".mhsa", out);
            sgp_[i].collect(prefix + ".layer" + std::to_string(i) + ".sgp", out);
        }
    }

private:
    M3eConfig cfg_;
    std::vector<nn::AttentionBlock<S>> attention_;
    std::vector<SgpLayer<S>> sgp_;
};

}  // namespace bmoe
