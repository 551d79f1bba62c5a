#pragma once

// Dual-stream front end: region crops, a token transformer for appearance
// (semantic stream) and a small conv/SE/TSM stack for dynamics (motion
// stream).

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bmoe/data/sample.hpp"
#include "bmoe/nn/blocks.hpp"

namespace bmoe {

struct RegionCrop {
    RegionId region = RegionId::Head;
    std::size_t frames_count = 0, height = 0, width = 0, channels = 0;
    std::vector<float> frames;  // [T x h x w x C]

    Shape shape() const { return {frames_count, height, width, channels}; }

    template <typename S>
    Tensor<S> tensor() const {
        return Tensor<S>(shape(), std::vector<S>(frames.begin(), frames.end()));
    }
};

/// Tight bounding-box crop of every region with out-of-mask pixels zeroed.
/// An empty mask yields a 1 x 1 zero crop.
inline std::array<RegionCrop, kNumRegions> extract_region_crops(const VideoSample& s) {
    validate_sample(s);
    std::array<RegionCrop, kNumRegions> out;
    for (RegionId r : kAllRegions) {
        RegionCrop& crop = out[index_of(r)];
        crop.region = r;
        crop.frames_count = s.frames_count;
        crop.channels = s.channels;
        std::size_t y0 = s.height, y1 = 0, x0 = s.width, x1 = 0;
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x)
                if (s.in_mask(r, y, x)) {
                    y0 = std::min(y0, y), y1 = std::max(y1, y + 1);
                    x0 = std::min(x0, x), x1 = std::max(x1, x + 1);
                }
        if (y1 == 0) {
            crop.height = crop.width = 1;
            crop.frames.assign(s.frames_count * s.channels, 0.0f);
            continue;
        }
        crop.height = y1 - y0;
        crop.width = x1 - x0;
        crop.frames.assign(s.frames_count * crop.height * crop.width * s.channels, 0.0f);
        for (std::size_t t = 0; t < s.frames_count; ++t)
            for (std::size_t y = y0; y < y1; ++y)
                for (std::size_t x = x0; x < x1; ++x) {
                    if (!s.in_mask(r, y, x)) continue;
                    for (std::size_t c = 0; c < s.channels; ++c)
                        crop.frames[((t * crop.height + (y - y0)) * crop.width + (x - x0)) * s.channels + c] =
                            s.at(t, y, x, c);
                }
    }
    return out;
}

/// Nearest-neighbour resize of frames[T x h x w x C] to [T x p*p*C]
/// (one flattened patch vector per frame). Not differentiable.
template <typename S>
Tensor<S> resize_to_patch_vectors(const Tensor<S>& frames, std::size_t p) {
    if (frames.rank() != 4) throw DimensionError("semantic_encoder: expected [T x H x W x C] frames, got " +
                                                 shape_str(frames.shape()));
    const std::size_t T = frames.dim(0), h = frames.dim(1), w = frames.dim(2), C = frames.dim(3);
    std::vector<S> out(T * p * p * C);
    const auto& in = frames.data();
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < p; ++i) {
            const std::size_t sy = i * h / p;
            for (std::size_t j = 0; j < p; ++j) {
                const std::size_t sx = j * w / p;
                for (std::size_t c = 0; c < C; ++c)
                    out[((t * p + i) * p + j) * C + c] = in[((t * h + sy) * w + sx) * C + c];
            }
        }
    return Tensor<S>({T, p * p * C}, std::move(out));
}

/// Fixed sinusoidal position code, [T x D].
template <typename S>
Tensor<S> sinusoidal_positions(std::size_t T, std::size_t D) {
    std::vector<S> pe(T * D);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < D; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(D));
            const double a = static_cast<double>(t) * rate;
            pe[t * D + i] = static_cast<S>(i % 2 == 0 ? std::sin(a) : std::cos(a));
        }
    return Tensor<S>({T, D}, std::move(pe));
}

struct SemanticConfig {
    std::size_t channels = 2;
    std::size_t model_dim = 32;
    std::size_t patch_grid = 4;
    std::size_t depth = 2;
    std::size_t num_heads = 4;

    void validate() const {
        if (channels < 1 || patch_grid < 1) throw ContractError("semantic_encoder: channels and patch_grid must be >= 1");
        nn::AttentionConfig{model_dim, num_heads, false}.validate();
    }
};

/// Per-frame patch vectors projected to D, plus position code, through
/// `depth` transformer blocks. One instance encodes crops and full frames.
template <typename S>
class SemanticEncoder {
public:
    SemanticEncoder() = default;
    SemanticEncoder(const SemanticConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        embed_ = nn::Linear<S>(cfg_.patch_grid * cfg_.patch_grid * cfg_.channels, cfg_.model_dim, rng);
        for (std::size_t i = 0; i < cfg_.depth; ++i)
            blocks_.emplace_back(nn::AttentionConfig{cfg_.model_dim, cfg_.num_heads, false}, rng);
    }

    const SemanticConfig& config() const { return cfg_; }

    /// frames [T x h x w x C] -> tokens [T x D].
    Tensor<S> operator()(const Tensor<S>& frames) const {
        if (frames.rank() != 4 || frames.dim(3) != cfg_.channels) {
            throw DimensionError("semantic_encoder: frames " + shape_str(frames.shape()) + " do not have " +
                                 std::to_string(cfg_.channels) + " channels");
        }
        const std::size_t T = frames.dim(0);
        Tensor<S> h = add(embed_(resize_to_patch_vectors(frames, cfg_.patch_grid)),
                          sinusoidal_positions<S>(T, cfg_.model_dim));
        for (const auto& b : blocks_) h = b(h);
        return h;
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        embed_.collect(prefix + ".embed", out);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    }

private:
    SemanticConfig cfg_;
    nn::Linear<S> embed_;
    std::vector<nn::TransformerEncoderBlock<S>> blocks_;
};

struct MotionConfig {
    std::size_t channels = 2;
    std::size_t stem_channels = 8;
    /// Output width of each stage; the last one is D_m.
    std::vector<std::size_t> stage_channels{16, 24};
    std::size_t kernel = 3;
    std::size_t se_reduction = 4;
    double tsm_fraction = 0.25;

    std::size_t output_dim() const { return stage_channels.empty() ? 0 : stage_channels.back(); }

    void validate() const {
        if (channels < 1 || stem_channels < 1) throw ContractError("motion_encoder: channel counts must be >= 1");
        if (stage_channels.empty()) throw ContractError("motion_encoder: at least one stage is required");
        if (kernel % 2 == 0) throw ContractError("motion_encoder: kernel must be odd");
        std::size_t in = stem_channels;
        for (std::size_t c : stage_channels) {
            nn::TsmConfig{tsm_fraction, in}.validate();
            nn::SeConfig{c, se_reduction}.validate();
            in = c;
        }
    }
};

/// stem conv -> GELU, then per stage: 2x2 average pool (while the frame
/// is at least 2x2) -> temporal shift -> conv -> GELU -> squeeze-excitation;
/// finally a global average over time and space and a layer norm. The
/// pooled features of sparse inputs are tiny (about 1e-3); the norm brings
/// them to unit scale.
template <typename S>
class MotionEncoder {
public:
    MotionEncoder() = default;
    MotionEncoder(const MotionConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t k = cfg_.kernel;
        stem_w_ = param_kaiming<S>({k, k, cfg_.channels, cfg_.stem_channels}, k * k * cfg_.channels, rng);
        stem_b_ = param_zeros<S>({cfg_.stem_channels});
        std::size_t in = cfg_.stem_channels;
        for (std::size_t c : cfg_.stage_channels) {
            Stage st;
            st.tsm = {cfg_.tsm_fraction, in};
            st.w = param_kaiming<S>({k, k, in, c}, k * k * in, rng);
            st.b = param_zeros<S>({c});
            st.se = nn::SqueezeExcitation<S>({c, cfg_.se_reduction}, rng);
            stages_.push_back(std::move(st));
            in = c;
        }
        norm_ = nn::LayerNorm<S>(in);
    }

    const MotionConfig& config() const { return cfg_; }

    /// frames [T x H x W x C] -> z_m [D_m].
    Tensor<S> operator()(const Tensor<S>& frames) const {
        if (frames.rank() != 4 || frames.dim(3) != cfg_.channels) {
            throw DimensionError("motion_encoder: frames " + shape_str(frames.shape()) + " do not have " +
                                 std::to_string(cfg_.channels) + " channels");
        }
        Tensor<S> h = gelu(conv2d(frames, stem_w_, stem_b_));
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            const Stage& st = stages_[i];
            if (h.dim(1) >= 2 && h.dim(2) >= 2) h = avg_pool2(h);
            h = st.se(gelu(conv2d(nn::temporal_shift(h, st.tsm), st.w, st.b)));
        }
        const std::size_t C = h.shape().back();
        return norm_(mean_rows(reshape(h, {h.size() / C, C})));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.push_back({prefix + ".stem.weight", stem_w_});
        out.push_back({prefix + ".stem.bias", stem_b_});
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            const std::string p = prefix + ".stage" + std::to_string(i);
            out.push_back({p + ".conv.weight", stages_[i].w});
            out.push_back({p + ".conv.bias", stages_[i].b});
            stages_[i].se.collect(p + ".se", out);
        }
        norm_.collect(prefix + ".norm", out);
    }

private:
    struct Stage {
        nn::TsmConfig tsm;
        Tensor<S> w, b;
        nn::SqueezeExcitation<S> se;
    };

    MotionConfig cfg_;
    Tensor<S> stem_w_, stem_b_;
    std::vector<Stage> stages_;
    nn::LayerNorm<S> norm_;
};

}  // namespace bmoe
