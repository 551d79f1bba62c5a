#pragma once

// Block-by-block finite-difference check of every differentiable component
// and of the end-to-end classification loss, in double precision.

#include <functional>
#include <string>
#include <vector>

#include "bmoe/gradcheck.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

struct GradCheckDims {
    std::size_t frames = 6;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t channels = 2;
    std::size_t model_dim = 16;
    std::size_t motion_dim = 12;
    std::size_t num_classes = 4;
    std::size_t m3e_depth = 2;  // for the standalone M3E check
    std::uint64_t seed = 1;
    // Larger than the 1e-5 default: several coordinates (attention key bias)
    // have an exactly zero gradient, where only roundoff shows up.
    double eps = 1e-4;
    double tolerance = 1e-4;
    std::size_t max_parameters = 20000;

    /// Toy end-to-end model: all four experts, one block per stack.
    ModelConfig model_config() const {
        ModelConfig m;
        m.num_classes = num_classes;
        m.channels = channels;
        m.model_dim = model_dim;
        m.patch_grid = 2;
        m.semantic_depth = 1;
        m.semantic_heads = 4;
        m.expert_heads = 4;
        m.expert_depth = 1;
        m.motion_stem = 4;
        m.motion_stages = {4, motion_dim};
        m.te_depth = 1;
        m.te_heads = 4;
        m.head_hidden = 8;
        m.class_region_map.clear();
        for (std::size_t c = 0; c < num_classes; ++c) m.class_region_map.push_back(region_from_index(c % kNumRegions));
        return m;
    }
};

struct GradCheckSuiteResult {
    std::vector<GradCheckReport<double>> blocks;
    std::size_t model_parameters = 0;
    double tolerance = 1e-4;

    bool passed() const {
        for (const auto& b : blocks)
            if (!b.passed(tolerance)) return false;
        return !blocks.empty();
    }
};

namespace detail {

inline void randomize(const ParamList<double>& params, Rng& rng, double scale = 0.5) {
    for (auto p : params)
        for (auto& v : p.tensor.mutable_data()) v = rng.uniform(-scale, scale);
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = rng.uniform(-1.0, 1.0);
    return Tensor<double>(std::move(shape), std::move(data), requires_grad);
}

/// Scalar probe <out, R> with a fixed random R, so every output coordinate
/// carries a distinct weight.
inline Tensor<double> probe(const Tensor<double>& out, const Tensor<double>& r) { return sum(mul(out, r)); }

}  // namespace detail

/// Refuses (ValidationError) when the toy model exceeds the parameter budget.
inline GradCheckSuiteResult run_gradcheck_suite(const GradCheckDims& dims) {
    using T = Tensor<double>;
    GradCheckSuiteResult res;
    res.tolerance = dims.tolerance;
    const ModelConfig mcfg = dims.model_config();
    BMoEModel<double> model(mcfg, dims.seed);
    res.model_parameters = parameter_count(model.parameters());
    if (res.model_parameters >= dims.max_parameters)
        throw ValidationError({"gradcheck: toy model has " + std::to_string(res.model_parameters) +
                               " parameters, the budget is below " + std::to_string(dims.max_parameters)});

    Rng rng(derive_seed(dims.seed, 0x6C));
    const std::size_t Tn = dims.frames, D = dims.model_dim;
    const double eps = dims.eps;

    auto check = [&](const std::string& name, const ParamList<double>& params, std::vector<T> inputs,
                     const std::function<T()>& out) {
        detail::randomize(params, rng);
        std::vector<T> wrt = tensors_of(params);
        for (auto& i : inputs) wrt.push_back(i);
        T r;
        {
            NoGradGuard g;
            r = detail::random_tensor(out().shape(), rng);
        }
        res.blocks.push_back(check_gradients<double>(name, [&] { return detail::probe(out(), r); }, wrt, eps));
    };

    nn::AttentionConfig att{D, 4, false};
    {
        nn::MultiHeadSelfAttention<double> mhsa(att, rng);
        ParamList<double> p;
        mhsa.collect("mhsa", p);
        T x = detail::random_tensor({Tn, D}, rng, true);
        check("MHSA", p, {x}, [&] { return mhsa(x); });
    }
    M3eConfig m3e_cfg{D, 4, 3, 3, dims.m3e_depth};
    {
        SgpLayer<double> sgp(m3e_cfg, rng);
        ParamList<double> p;
        sgp.collect("sgp", p);
        T x = detail::random_tensor({Tn, D}, rng, true);
        check("SGP", p, {x}, [&] { return sgp(x); });
    }
    {
        M3e<double> m3e(m3e_cfg, rng);
        ParamList<double> p;
        m3e.collect("m3e", p);
        T x = detail::random_tensor({Tn, D}, rng, true);
        check("M3E", p, {x}, [&] { return m3e(x); });
    }
    {
        nn::SqueezeExcitation<double> se({dims.motion_dim, 4}, rng);
        ParamList<double> p;
        se.collect("se", p);
        T x = detail::random_tensor({Tn, dims.motion_dim}, rng, true);
        check("SE", p, {x}, [&] { return se(x); });
    }
    {
        T x = detail::random_tensor({Tn, 8}, rng, true);
        check("TSM", {}, {x}, [&] { return nn::temporal_shift(x, nn::TsmConfig{0.25, 8}); });
    }
    {
        nn::CrossAttention<double> fusion({D, 1, false}, rng);
        ParamList<double> p;
        fusion.collect("fusion", p);
        T q = detail::random_tensor({D}, rng, true);
        T kv = detail::random_tensor({kNumRegions, D}, rng, true);
        check("fusion", p, {q, kv}, [&] { return fusion.forward(q, kv).output; });
    }
    {
        nn::TransformerEncoderBlock<double> te(att, rng);
        ParamList<double> p;
        te.collect("te", p);
        T x = detail::random_tensor({Tn, D}, rng, true);
        check("TE", p, {x}, [&] { return te(x); });
    }
    {
        nn::MlpHead<double> head(D, 8, dims.num_classes, rng);
        ParamList<double> p;
        head.collect("head", p);
        T z = detail::random_tensor({D}, rng, true);
        check("head", p, {z}, [&] { return head(z); });
    }

    // Stream encoders and the whole model on one synthetic clip.
    DatasetConfig dcfg = presets::separable(dims.seed, 1);
    dcfg.clip_length = dims.frames;
    dcfg.height = dims.height;
    dcfg.width = dims.width;
    dcfg.channels = dims.channels;
    dcfg.classes.resize(std::max<std::size_t>(dims.num_classes, kNumRegions));
    for (std::size_t c = 0; c < dcfg.classes.size(); ++c) {
        dcfg.classes[c] = presets::make_class(static_cast<std::uint32_t>(c), {"class" + std::to_string(c)},
                                              region_from_index(c % kNumRegions), MotionKind::Burst,
                                              SpatialPattern::Full, 0.25);
        dcfg.classes[c].duration_max = std::min<std::size_t>(dcfg.classes[c].duration_max, dims.frames);
        dcfg.classes[c].duration_min = std::min(dcfg.classes[c].duration_min, dcfg.classes[c].duration_max);
    }
    const VideoSample sample = generate_sample(dcfg, 0, 0);
    const T frames = frames_tensor<double>(sample);
    {
        ParamList<double> p = model.semantic_parameters();
        const T crop = extract_region_crops(sample)[0].tensor<double>();
        check("semantic_encoder", p, {}, [&] { return model.semantic()(crop); });
    }
    {
        ParamList<double> p;
        model.motion().collect("motion", p);
        check("motion_encoder", p, {}, [&] { return model.motion()(frames); });
    }
    {
        const ParamList<double> p = model.parameters();
        detail::randomize(p, rng);
        const std::size_t label = sample.label;
        res.blocks.push_back(check_gradients<double>(
            "end_to_end", [&] { return cross_entropy(model.forward(sample).logits, label); }, tensors_of(p), eps));
    }
    return res;
}

}  // namespace bmoe
