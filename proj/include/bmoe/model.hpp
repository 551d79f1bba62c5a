#pragma once

// Region-aware mixture of experts over a dual-stream encoder.
//
//   crops -> semantic tokens -> expert_k -> z_k          (enabled k)
//   full frame -> semantic tokens -> mean -> z_g
//   z~ = CrossAttention(query z_g, keys/values [z_k])
//   z_m = motion encoder(full frame)
//   logits = head(TE(z~ + W_m z_m))

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bmoe/data/synthetic.hpp"
#include "bmoe/encoders.hpp"
#include "bmoe/m3e.hpp"

namespace bmoe {

/// Experts: one M3E per region, fused by cross-attention.
/// Single: the no-routing baseline. Tokens of all four regions are
/// concatenated and pass through one M3E of four times the depth, so the
/// parameter count matches; the fusion attends over that one embedding.
enum class RoutingMode { Experts, Single };

struct ModelConfig {
    std::size_t num_classes = 8;
    std::size_t channels = 2;
    std::size_t model_dim = 32;
    std::size_t patch_grid = 4;
    std::size_t semantic_depth = 2;
    std::size_t semantic_heads = 4;
    std::size_t expert_heads = 4;
    std::size_t expert_depth = 1;
    std::size_t sgp_window = 3;
    std::size_t sgp_scale_k = 3;
    std::size_t motion_stem = 8;
    std::vector<std::size_t> motion_stages{16, 24};
    std::size_t se_reduction = 4;
    double tsm_fraction = 0.25;
    std::size_t te_depth = 1;
    std::size_t te_heads = 4;
    std::size_t head_hidden = 32;
    /// Test-only: fusion without projections, so z~ is a convex mix of z_k.
    bool fusion_identity = false;
    RoutingMode routing = RoutingMode::Experts;
    std::vector<RegionId> class_region_map;
    /// Experts that exist at all. A missing expert behaves as permanently disabled.
    std::array<bool, kNumRegions> experts_present{true, true, true, true};

    SemanticConfig semantic() const { return {channels, model_dim, patch_grid, semantic_depth, semantic_heads}; }
    MotionConfig motion() const { return {channels, motion_stem, motion_stages, 3, se_reduction, tsm_fraction}; }
    M3eConfig expert() const {
        const std::size_t depth = routing == RoutingMode::Single ? expert_depth * kNumRegions : expert_depth;
        return {model_dim, expert_heads, sgp_window, sgp_scale_k, depth};
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        auto check = [&](auto&& f) {
            try {
                f();
            } catch (const std::exception& e) {
                v.push_back(e.what());
            }
        };
        if (num_classes < 1) v.push_back("num_classes must be >= 1");
        if (class_region_map.size() != num_classes)
            v.push_back("class_region_map has " + std::to_string(class_region_map.size()) + " entries for " +
                        std::to_string(num_classes) + " classes");
        for (std::size_t c = 0; c < class_region_map.size(); ++c)
            if (index_of(class_region_map[c]) >= kNumRegions)
                v.push_back("class " + std::to_string(c) + " maps to an invalid region");
        if (head_hidden < 1) v.push_back("head_hidden must be >= 1");
        if (te_depth < 1) v.push_back("te_depth must be >= 1");
        check([&] { semantic().validate(); });
        check([&] { motion().validate(); });
        check([&] { expert().validate(); });
        check([&] { nn::AttentionConfig{model_dim, te_heads, false}.validate(); });
        bool any = false;
        for (bool p : experts_present) any = any || p;
        if (!any) v.push_back("at least one expert must be present");
        return v;
    }

    void validate() const {
        auto v = violations();
        if (!v.empty()) throw ValidationError(std::move(v));
    }
};

struct AblationMask {
    bool use_semantic = true;
    bool use_motion = true;
    std::array<bool, kNumRegions> expert_enabled{true, true, true, true};

    static AblationMask all_on() { return {}; }
    static AblationMask without_expert(RegionId r) {
        AblationMask m;
        m.expert_enabled[index_of(r)] = false;
        return m;
    }
    static AblationMask semantic_only() { return {true, false, {true, true, true, true}}; }
    static AblationMask motion_only() { return {false, true, {true, true, true, true}}; }

    std::size_t enabled_count() const {
        std::size_t n = 0;
        for (bool e : expert_enabled) n += e ? 1 : 0;
        return n;
    }

    void validate() const {
        if (!use_semantic && !use_motion) throw ContractError("ablation mask disables both streams");
        if (use_semantic && enabled_count() == 0)
            throw ContractError("ablation mask enables the semantic stream with every expert disabled");
    }

    std::string label() const {
        std::string s = use_semantic ? "semantic" : "";
        if (use_motion) s += s.empty() ? "motion" : "+motion";
        if (use_semantic && enabled_count() < kNumRegions) {
            s += " experts=";
            bool first = true;
            for (RegionId r : kAllRegions)
                if (expert_enabled[index_of(r)]) s += (first ? "" : "|") + std::string(region_name(r)), first = false;
        }
        return s;
    }

    bool operator==(const AblationMask&) const = default;
};

template <typename S>
struct ForwardResult {
    Tensor<S> logits;  // [num_classes]
    /// Fusion weight per region; 0 for experts outside the softmax support.
    std::array<S, kNumRegions> weights{};
    bool has_weights = false;
};

template <typename S>
class BMoEModel {
public:
    BMoEModel() = default;

    BMoEModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        // Independent streams per component keep initial values stable when
        // an unrelated component changes shape.
        Rng sem_rng(derive_seed(seed, 1)), mot_rng(derive_seed(seed, 2)), fus_rng(derive_seed(seed, 3)),
            te_rng(derive_seed(seed, 4)), head_rng(derive_seed(seed, 5));
        semantic_ = SemanticEncoder<S>(cfg_.semantic(), sem_rng);
        motion_ = MotionEncoder<S>(cfg_.motion(), mot_rng);
        if (cfg_.routing == RoutingMode::Experts) {
            for (RegionId r : kAllRegions) {
                if (!cfg_.experts_present[index_of(r)]) continue;
                Rng er(derive_seed(seed, 10 + index_of(r)));
                experts_[index_of(r)] = M3e<S>(cfg_.expert(), er);
            }
        } else {
            Rng er(derive_seed(seed, 10));
            experts_[0] = M3e<S>(cfg_.expert(), er);
        }
        fusion_ = nn::CrossAttention<S>({cfg_.model_dim, 1, cfg_.fusion_identity}, fus_rng);
        motion_proj_ = nn::Linear<S>(cfg_.motion().output_dim(), cfg_.model_dim, mot_rng);
        for (std::size_t i = 0; i < cfg_.te_depth; ++i)
            te_.emplace_back(nn::AttentionConfig{cfg_.model_dim, cfg_.te_heads, false}, te_rng);
        head_ = nn::MlpHead<S>(cfg_.model_dim, cfg_.head_hidden, cfg_.num_classes, head_rng);
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_classes() const { return cfg_.num_classes; }

    bool expert_present(RegionId r) const {
        return cfg_.routing == RoutingMode::Experts && cfg_.experts_present[index_of(r)];
    }

    const SemanticEncoder<S>& semantic() const { return semantic_; }
    const MotionEncoder<S>& motion() const { return motion_; }
    const M3e<S>& expert(RegionId r) const { return experts_[index_of(r)]; }
    const M3e<S>& single_encoder() const { return experts_[0]; }

    /// Moves expert b's parameters into slot a and vice versa.
    void swap_experts(RegionId a, RegionId b) {
        std::swap(experts_[index_of(a)], experts_[index_of(b)]);
        std::swap(cfg_.experts_present[index_of(a)], cfg_.experts_present[index_of(b)]);
    }

    /// Pooled region embedding z_k of one crop.
    Tensor<S> expert_embedding(RegionId r, const RegionCrop& crop) const {
        return expert(r)(semantic_(crop.tensor<S>()));
    }

    /// Global embedding z_g of the uncropped clip.
    Tensor<S> global_embedding(const Tensor<S>& frames) const { return mean_rows(semantic_(frames)); }

    ForwardResult<S> forward(const VideoSample& sample, const AblationMask& mask = {}) const {
        mask.validate();
        if (sample.channels != cfg_.channels)
            throw DimensionError("bmoe_model: sample has " + std::to_string(sample.channels) + " channels, model expects " +
                                 std::to_string(cfg_.channels));
        const Tensor<S> frames = frames_tensor<S>(sample);
        ForwardResult<S> out;
        std::optional<Tensor<S>> fused;
        if (mask.use_semantic) {
            const auto crops = extract_region_crops(sample);
            const Tensor<S> z_g = global_embedding(frames);
            if (cfg_.routing == RoutingMode::Experts) {
                std::vector<Tensor<S>> rows;
                std::vector<RegionId> order;
                for (RegionId r : kAllRegions) {
                    if (!mask.expert_enabled[index_of(r)] || !expert_present(r)) continue;
                    rows.push_back(reshape(expert_embedding(r, crops[index_of(r)]), {1, cfg_.model_dim}));
                    order.push_back(r);
                }
                if (rows.empty()) throw ContractError("bmoe_model: no enabled expert is present");
                auto att = fusion_.forward(z_g, concat_rows(rows));
                for (std::size_t i = 0; i < order.size(); ++i) out.weights[index_of(order[i])] = att.weights[i];
                out.has_weights = true;
                fused = att.output;
            } else {
                std::vector<Tensor<S>> tokens;
                for (RegionId r : kAllRegions) tokens.push_back(semantic_(crops[index_of(r)].template tensor<S>()));
                const Tensor<S> z = experts_[0](concat_rows(tokens));
                fused = fusion_.forward(z_g, reshape(z, {1, cfg_.model_dim})).output;
            }
        }
        Tensor<S> h;
        if (mask.use_motion) {
            const Tensor<S> zm = motion_proj_(motion_(frames));
            h = fused ? add(*fused, zm) : zm;
        } else {
            h = *fused;
        }
        h = reshape(h, {1, cfg_.model_dim});
        for (const auto& block : te_) h = block(h);
        out.logits = head_(reshape(h, {cfg_.model_dim}));
        return out;
    }

    /// Every parameter, named by component.
    ParamList<S> parameters() const { return parameters(AblationMask::all_on()); }

    /// Parameters that take part in a forward pass under `mask`.
    ParamList<S> parameters(const AblationMask& mask) const {
        ParamList<S> out;
        if (mask.use_semantic) {
            semantic_.collect("semantic", out);
            if (cfg_.routing == RoutingMode::Experts) {
                for (RegionId r : kAllRegions)
                    if (mask.expert_enabled[index_of(r)] && expert_present(r))
                        experts_[index_of(r)].collect("expert." + std::string(region_name(r)), out);
            } else {
                experts_[0].collect("single", out);
            }
            fusion_.collect("fusion", out);
        }
        if (mask.use_motion) {
            motion_.collect("motion", out);
            motion_proj_.collect("motion_proj", out);
        }
        for (std::size_t i = 0; i < te_.size(); ++i) te_[i].collect("te" + std::to_string(i), out);
        head_.collect("head", out);
        return out;
    }

    /// Parameters of one stream component, for block-wise checks and checkpoints.
    ParamList<S> semantic_parameters() const {
        ParamList<S> out;
        semantic_.collect("semantic", out);
        return out;
    }
    ParamList<S> expert_parameters(RegionId r) const {
        ParamList<S> out;
        if (expert_present(r)) experts_[index_of(r)].collect("expert." + std::string(region_name(r)), out);
        return out;
    }
    ParamList<S> single_parameters() const {
        ParamList<S> out;
        if (cfg_.routing == RoutingMode::Single) experts_[0].collect("single", out);
        return out;
    }

    const nn::CrossAttention<S>& fusion() const { return fusion_; }
    const nn::Linear<S>& motion_projection() const { return motion_proj_; }
    const std::vector<nn::TransformerEncoderBlock<S>>& temporal_encoder() const { return te_; }
    const nn::MlpHead<S>& head() const { return head_; }

private:
    ModelConfig cfg_;
    SemanticEncoder<S> semantic_;
    MotionEncoder<S> motion_;
    std::array<M3e<S>, kNumRegions> experts_;
    nn::CrossAttention<S> fusion_;
    nn::Linear<S> motion_proj_;
    std::vector<nn::TransformerEncoderBlock<S>> te_;
    nn::MlpHead<S> head_;
};

template <typename S>
std::size_t predict(const BMoEModel<S>& model, const VideoSample& s, const AblationMask& mask = {}) {
    NoGradGuard guard;
    return argmax(model.forward(s, mask).logits);
}

// ---------------------------------------------------------------------------
// Expert-importance heatmap

struct Heatmap {
    /// rows[c][k]: mean fusion weight on region k over samples of class c.
    /// Classes without samples hold NaN and are listed in `empty_classes`.
    std::vector<std::array<double, kNumRegions>> rows;
    std::vector<std::size_t> counts;
    std::vector<std::size_t> empty_classes;

    std::string to_csv(const std::vector<std::string>& class_names = {}) const {
        std::ostringstream os;
        os << "class_id,class_name,head,body,upper_limb,lower_limb\n" << std::setprecision(6);
        for (std::size_t c = 0; c < rows.size(); ++c) {
            os << c << ',' << (c < class_names.size() ? class_names[c] : std::to_string(c));
            for (double v : rows[c]) os << ',' << v;
            os << '\n';
        }
        return os.str();
    }
};

template <typename S>
Heatmap expert_importance_heatmap(const BMoEModel<S>& model, const std::vector<VideoSample>& samples,
                                  const AblationMask& mask = {}) {
    if (model.config().routing != RoutingMode::Experts || !mask.use_semantic)
        throw ContractError("expert_importance_heatmap: model has no expert routing under this mask");
    NoGradGuard guard;
    const std::size_t C = model.num_classes();
    Heatmap h;
    h.rows.assign(C, {});
    h.counts.assign(C, 0);
    for (const auto& s : samples) {
        if (s.label >= C) throw ContractError("expert_importance_heatmap: label " + std::to_string(s.label) + " out of range");
        const auto res = model.forward(s, mask);
        for (std::size_t k = 0; k < kNumRegions; ++k) h.rows[s.label][k] += static_cast<double>(res.weights[k]);
        ++h.counts[s.label];
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (h.counts[c] == 0) {
            h.rows[c].fill(std::numeric_limits<double>::quiet_NaN());
            h.empty_classes.push_back(c);
            continue;
        }
        for (auto& v : h.rows[c]) v /= static_cast<double>(h.counts[c]);
    }
    return h;
}

}  // namespace bmoe
