#pragma once

#include <string>

#include "bmoe/nn/layers.hpp"

namespace bmoe::nn {

struct AttentionConfig {
    std::size_t model_dim = 32;
    std::size_t num_heads = 4;
    /// Skip every projection (q = k = v = input, no output map). Test-only.
    bool identity_mode = false;

    std::size_t head_dim() const { return model_dim / num_heads; }

    void validate() const {
        if (model_dim == 0 || num_heads == 0) throw ContractError("attention: model_dim and num_heads must be positive");
        if (model_dim % num_heads != 0) {
            throw ContractError("attention: model_dim " + std::to_string(model_dim) + " is not divisible by " +
                                std::to_string(num_heads) + " heads");
        }
        if (identity_mode && num_heads != 1) throw ContractError("attention: identity_mode requires a single head");
    }
};

/// Multi-head scaled dot-product self-attention with q/k/v/output projections.
template <typename S>
class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(const AttentionConfig& cfg, Rng& rng, bool zero_output = false) : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.identity_mode) return;
        const std::size_t d = cfg_.model_dim;
        q_ = Linear<S>(d, d, rng);
        k_ = Linear<S>(d, d, rng);
        v_ = Linear<S>(d, d, rng);
        o_ = zero_output ? Linear<S>::zeros(d, d) : Linear<S>(d, d, rng);
    }

    const AttentionConfig& config() const { return cfg_; }

    AttentionResult<S> forward(const Tensor<S>& x) const {
        if (x.rank() != 2 || x.dim(1) != cfg_.model_dim) {
            throw DimensionError("multi_head_self_attention: input " + shape_str(x.shape()) + " does not have width " +
                                 std::to_string(cfg_.model_dim));
        }
        if (cfg_.identity_mode) return attention(x, x, x, 1);
        auto res = attention(q_(x), k_(x), v_(x), cfg_.num_heads);
        res.output = o_(res.output);
        return res;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return forward(x).output; }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        if (cfg_.identity_mode) return;
        q_.collect(prefix + ".q", out);
        k_.collect(prefix + ".k", out);
        v_.collect(prefix + ".v", out);
        o_.collect(prefix + ".o", out);
    }

private:
    AttentionConfig cfg_;
    Linear<S> q_, k_, v_, o_;
};

/// Single-head attention of one query vector over K key/value rows that
/// share their projections. The softmax weights are returned for logging.
template <typename S>
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(const AttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.num_heads != 1) throw ContractError("cross_attention: expert fusion uses a single head");
        if (cfg_.identity_mode) return;
        const std::size_t d = cfg_.model_dim;
        q_ = Linear<S>(d, d, rng);
        k_ = Linear<S>(d, d, rng);
        v_ = Linear<S>(d, d, rng);
        o_ = Linear<S>(d, d, rng);
    }

    const AttentionConfig& config() const { return cfg_; }

    /// query: [D]; keys_values: [K x D]. Returns output [D] and weights [K].
    AttentionResult<S> forward(const Tensor<S>& query, const Tensor<S>& keys_values) const {
        if (keys_values.rank() != 2 || keys_values.dim(0) == 0) throw ContractError("cross_attention: no key rows");
        if (query.rank() != 1 || query.dim(0) != cfg_.model_dim || keys_values.dim(1) != cfg_.model_dim) {
            throw DimensionError("cross_attention: query " + shape_str(query.shape()) + " / keys " +
                                 shape_str(keys_values.shape()) + " do not have width " +
                                 std::to_string(cfg_.model_dim));
        }
        if (cfg_.identity_mode) return pooled_attention(query, keys_values, keys_values);
        auto res = pooled_attention(q_(query), k_(keys_values), v_(keys_values));
        res.output = o_(res.output);
        return res;
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        if (cfg_.identity_mode) return;
        q_.collect(prefix + ".q", out);
        k_.collect(prefix + ".k", out);
        v_.collect(prefix + ".v", out);
        o_.collect(prefix + ".o", out);
    }

private:
    AttentionConfig cfg_{32, 1, false};
    Linear<S> q_, k_, v_, o_;
};

}  // namespace bmoe::nn
