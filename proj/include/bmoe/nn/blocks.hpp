#pragma once

#include <cmath>
#include <string>

#include "bmoe/nn/attention.hpp"
#include "bmoe/nn/layers.hpp"

namespace bmoe::nn {

struct SeConfig {
    std::size_t channels = 8;
    std::size_t reduction = 4;

    std::size_t bottleneck() const { return channels / reduction; }
    void validate() const {
        if (channels == 0 || reduction == 0 || channels % reduction != 0 || bottleneck() < 1) {
            throw ContractError("squeeze_excitation: reduction " + std::to_string(reduction) +
                                " must divide channel count " + std::to_string(channels));
        }
    }
};

/// Channel gating: squeeze by averaging over all leading positions, excite
/// through a bottleneck MLP and a logistic gate, rescale every channel.
template <typename S>
class SqueezeExcitation {
public:
    SqueezeExcitation() = default;
    SqueezeExcitation(const SeConfig& cfg, Rng& rng)
        : cfg_(checked(cfg)), fc1_(cfg.channels, cfg.bottleneck(), rng), fc2_(cfg.bottleneck(), cfg.channels, rng) {}

    static SqueezeExcitation zeros(const SeConfig& cfg) {
        cfg.validate();
        SqueezeExcitation se;
        se.cfg_ = cfg;
        se.fc1_ = Linear<S>::zeros(cfg.channels, cfg.bottleneck());
        se.fc2_ = Linear<S>::zeros(cfg.bottleneck(), cfg.channels);
        return se;
    }

    /// x: [... x C]. Returns the gated tensor, same shape.
    Tensor<S> operator()(const Tensor<S>& x) const { return forward(x).output; }

    struct Result {
        Tensor<S> output;
        Tensor<S> gate;
    };

    Result forward(const Tensor<S>& x) const {
        const std::size_t C = cfg_.channels;
        if (x.rank() < 2 || x.shape().back() != C) {
            throw DimensionError("squeeze_excitation: input " + shape_str(x.shape()) + " does not have " +
                                 std::to_string(C) + " channels");
        }
        const Tensor<S> flat = x.rank() == 2 ? x : reshape(x, {x.size() / C, C});
        const auto squeezed = mean_rows(flat);
        const auto gate = sigmoid(fc2_(gelu(fc1_(squeezed))));
        return {mul(x, gate), gate};
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        fc1_.collect(prefix + ".fc1", out);
        fc2_.collect(prefix + ".fc2", out);
    }

private:
    static const SeConfig& checked(const SeConfig& cfg) {
        cfg.validate();
        return cfg;
    }

    SeConfig cfg_;
    Linear<S> fc1_, fc2_;
};

struct TsmConfig {
    double shift_fraction = 0.25;
    std::size_t channels = 8;

    std::size_t shift_channels() const {
        return static_cast<std::size_t>(std::floor(shift_fraction * static_cast<double>(channels)));
    }
    void validate() const {
        if (!(shift_fraction > 0.0 && shift_fraction <= 0.5)) {
            throw ContractError("temporal_shift: shift fraction must lie in (0, 0.5]");
        }
        if (shift_channels() < 1) {
            throw ContractError("temporal_shift: " + std::to_string(channels) + " channels at fraction " +
                                std::to_string(shift_fraction) + " shift nothing");
        }
    }
};

/// Temporal shift of x[T x ... x C] with the channel split given by cfg.
template <typename S>
Tensor<S> temporal_shift(const Tensor<S>& x, const TsmConfig& cfg) {
    cfg.validate();
    if (x.shape().back() != cfg.channels) {
        throw DimensionError("temporal_shift: input " + shape_str(x.shape()) + " does not have " +
                             std::to_string(cfg.channels) + " channels");
    }
    return bmoe::temporal_shift(x, cfg.shift_channels());
}

/// Pre-norm residual self-attention: x + MHSA(LN(x)), output projection zero-initialised.
template <typename S>
class AttentionBlock {
public:
    AttentionBlock() = default;
    AttentionBlock(const AttentionConfig& cfg, Rng& rng) : norm_(cfg.model_dim), attn_(cfg, rng, true) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return add(x, attn_(norm_(x))); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        norm_.collect(prefix + ".ln", out);
        attn_.collect(prefix + ".attn", out);
    }

private:
    LayerNorm<S> norm_;
    MultiHeadSelfAttention<S> attn_;
};

/// Pre-norm transformer encoder block with a 4x-wide GELU feed-forward.
/// Both residual branches end in zero-initialised projections, so a fresh
/// block is the identity map.
template <typename S>
class TransformerEncoderBlock {
public:
    TransformerEncoderBlock() = default;
    TransformerEncoderBlock(const AttentionConfig& cfg, Rng& rng)
        : cfg_(cfg),
          attn_(cfg, rng),
          norm_(cfg.model_dim),
          ff1_(cfg.model_dim, 4 * cfg.model_dim, rng),
          ff2_(Linear<S>::zeros(4 * cfg.model_dim, cfg.model_dim)) {}

    Tensor<S> operator()(const Tensor<S>& x) const {
        if (x.rank() != 2 || x.dim(1) != cfg_.model_dim) {
            throw DimensionError("transformer_encoder_block: input " + shape_str(x.shape()) +
                                 " does not have width " + std::to_string(cfg_.model_dim));
        }
        const auto h = attn_(x);
        return add(h, ff2_(gelu(ff1_(norm_(h)))));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        attn_.collect(prefix + ".sa", out);
        norm_.collect(prefix + ".ln_ff", out);
        ff1_.collect(prefix + ".ff1", out);
        ff2_.collect(prefix + ".ff2", out);
    }

private:
    AttentionConfig cfg_;
    AttentionBlock<S> attn_;
    LayerNorm<S> norm_;
    Linear<S> ff1_, ff2_;
};

/// affine -> GELU -> affine, returning raw logits.
template <typename S>
class MlpHead {
public:
    MlpHead() = default;
    MlpHead(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng)
        : fc1_(in, hidden, rng), fc2_(hidden, classes, rng) {}

    static MlpHead zeros(std::size_t in, std::size_t hidden, std::size_t classes) {
        MlpHead h;
        h.fc1_ = Linear<S>::zeros(in, hidden);
        h.fc2_ = Linear<S>::zeros(hidden, classes);
        return h;
    }

    std::size_t num_classes() const { return fc2_.out_features(); }

    Tensor<S> operator()(const Tensor<S>& z) const {
        if (z.rank() != 1 || z.dim(0) != fc1_.in_features()) {
            throw DimensionError("mlp_head: input " + shape_str(z.shape()) + " does not have width " +
                                 std::to_string(fc1_.in_features()));
        }
        return fc2_(gelu(fc1_(z)));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        fc1_.collect(prefix + ".fc1", out);
        fc2_.collect(prefix + ".fc2", out);
    }

private:
    Linear<S> fc1_, fc2_;
};

}  // namespace bmoe::nn
