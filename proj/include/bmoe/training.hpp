#pragma once

// Two-stage training: per-region expert pretraining with an auxiliary
// label-embedding target, then end-to-end fine-tuning with cross-entropy.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "bmoe/losses.hpp"
#include "bmoe/metrics.hpp"
#include "bmoe/model.hpp"
#include "bmoe/optim.hpp"

namespace bmoe {

/// Raised when the training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double alpha = 50.0;
    double base_lr = 0.00125;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 10;
    std::vector<std::size_t> milestones{30, 60};
    double decay_factor = 10.0;
    std::size_t epochs = 500;
    /// Global gradient-norm cap per step; 0 disables clipping.
    double grad_clip = 0.0;
    std::uint64_t seed = 0;

    /// The {30, 60} milestones scaled by epochs / 100.
    static std::vector<std::size_t> scaled_milestones(std::size_t epochs) {
        return {(30 * epochs + 50) / 100, (60 * epochs + 50) / 100};
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(alpha >= 0.0)) v.push_back("alpha must be >= 0");
        if (epochs < 1) v.push_back("epochs must be >= 1");
        if (batch_size < 1) v.push_back("batch_size must be >= 1");
        if (!(base_lr >= 0.0)) v.push_back("base_lr must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) v.push_back("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) v.push_back("weight_decay must be >= 0");
        if (!(decay_factor > 0.0)) v.push_back("decay_factor must be > 0");
        if (!(grad_clip >= 0.0)) v.push_back("grad_clip must be >= 0");
        return v;
    }
    void validate() const {
        auto v = violations();
        if (!v.empty()) throw ValidationError(std::move(v));
    }

    template <typename S>
    SgdState<S> optimizer() const {
        SgdState<S> st;
        st.learning_rate = base_lr;
        st.momentum = momentum;
        st.weight_decay = weight_decay;
        st.epoch_milestones = milestones;
        st.decay_factor = decay_factor;
        return st;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double top1 = 0.0;
    double f1_macro = 0.0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch}, {"lr", lr}, {"loss", loss}, {"top1", top1}, {"f1_macro", f1_macro}};
    }
    bool operator==(const EpochRecord&) const = default;
};

inline std::string epoch_log_jsonl(const std::vector<EpochRecord>& log) {
    std::string out;
    for (const auto& r : log) out += r.to_json().dump() + "\n";
    return out;
}

using SampleObserver = std::function<void(const VideoSample&)>;

namespace detail {

/// Seeded permutation of [0, n) for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x5eed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.integer(0, i - 1))]);
    return idx;
}

/// Mini-batch SGD over `samples`. `step_loss` returns the per-sample loss
/// tensor and writes the predicted class (index into the label space).
template <typename S>
std::vector<EpochRecord> run_sgd(const std::vector<const VideoSample*>& samples, const ParamList<S>& params,
                                 const TrainConfig& cfg, std::size_t num_labels,
                                 const std::function<std::size_t(const VideoSample&)>& label_of,
                                 const std::function<Tensor<S>(const VideoSample&, std::size_t&)>& step_loss,
                                 const SampleObserver& observer) {
    cfg.validate();
    if (samples.empty()) throw ContractError("training: no samples");
    auto state = cfg.optimizer<S>();
    state.validate();
    std::vector<EpochRecord> log;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(samples.size(), cfg.seed, epoch);
        double loss_sum = 0.0;
        std::vector<std::size_t> y_true, y_pred;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            zero_grads(params);
            Tensor<S> total;
            for (std::size_t i = start; i < end; ++i) {
                const VideoSample& s = *samples[order[i]];
                if (observer) observer(s);
                std::size_t pred = 0;
                Tensor<S> l = step_loss(s, pred);
                loss_sum += static_cast<double>(l.item());
                y_true.push_back(label_of(s));
                y_pred.push_back(pred);
                total = total.defined() ? add(total, l) : l;
            }
            backward(scale(total, S(1) / static_cast<S>(end - start)));
            if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
            sgd_step(params, state, epoch);
        }
        if (!std::isfinite(loss_sum))
            throw TrainingDiverged("training diverged: non-finite loss in epoch " + std::to_string(epoch));
        const auto report = make_report(y_true, y_pred, num_labels);
        log.push_back({epoch, state.lr_at(epoch), loss_sum / static_cast<double>(samples.size()), report.top1,
                       report.f1_macro});
    }
    return log;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage one

template <typename S>
struct PretrainResult {
    std::optional<RegionId> region;  // empty for the single-encoder baseline
    std::vector<std::size_t> classes;  // global ids; classifier output i is classes[i]
    nn::Linear<S> classifier;
    nn::Linear<S> projection;  // pooled feature -> label-embedding space
    std::vector<EpochRecord> log;

    ParamList<S> head_parameters() const {
        ParamList<S> out;
        classifier.collect("pretrain.classifier", out);
        projection.collect("pretrain.projection", out);
        return out;
    }
};

/// Samples whose label belongs to `region` under the model's class map.
template <typename S>
std::vector<const VideoSample*> region_subset(const BMoEModel<S>& model, const std::vector<VideoSample>& samples,
                                              RegionId region) {
    std::vector<const VideoSample*> out;
    const auto& map = model.config().class_region_map;
    for (const auto& s : samples) {
        if (s.label >= map.size()) throw ContractError("training: label " + std::to_string(s.label) + " out of range");
        if (map[s.label] == region) out.push_back(&s);
    }
    return out;
}

namespace detail {

template <typename S>
PretrainResult<S> pretrain_with(const BMoEModel<S>& model, std::optional<RegionId> region,
                                std::vector<std::size_t> classes, const std::vector<const VideoSample*>& subset,
                                ParamList<S> params, const std::function<Tensor<S>(const VideoSample&)>& feature,
                                const LabelEmbeddingTable& table, const TrainConfig& cfg,
                                const SampleObserver& observer) {
    if (table.vectors.size() < model.num_classes())
        throw ContractError("pretrain: label embedding table has fewer classes than the model");
    const std::size_t D = model.config().model_dim;
    Rng rng(derive_seed(cfg.seed, 0xC1A5, region ? index_of(*region) : kNumRegions));
    PretrainResult<S> res;
    res.region = region;
    res.classes = std::move(classes);
    res.classifier = nn::Linear<S>(D, res.classes.size(), rng);
    // Zero start: L_emb begins at ‖X_q‖² and sends no gradient into the
    // encoder until the projection has picked up a direction.
    res.projection = nn::Linear<S>::zeros(D, table.dim);
    std::vector<std::size_t> local(model.num_classes(), 0);
    for (std::size_t i = 0; i < res.classes.size(); ++i) local[res.classes[i]] = i;
    std::vector<Tensor<S>> targets;
    for (std::size_t c = 0; c < model.num_classes(); ++c) targets.push_back(table.template tensor<S>(c));
    const S alpha = static_cast<S>(cfg.alpha);
    for (const auto& p : res.head_parameters()) params.push_back(p);
    res.log = run_sgd<S>(
        subset, params, cfg, res.classes.size(), [&](const VideoSample& s) { return local[s.label]; },
        [&](const VideoSample& s, std::size_t& pred) {
            const Tensor<S> z = feature(s);
            const Tensor<S> logits = res.classifier(z);
            pred = argmax(logits);
            const Tensor<S> l_cls = classification_loss(logits, local[s.label]);
            if (cfg.alpha == 0.0) return l_cls;
            return combined_loss(l_cls, embedding_alignment_loss(res.projection(z), targets[s.label]), alpha);
        },
        observer);
    return res;
}

}  // namespace detail

/// Trains the shared semantic encoder, expert `region`, a classifier over
/// that region's classes and a label-embedding projection on that region's
/// samples only, with L_cls + alpha * L_emb on the pooled expert embedding.
template <typename S>
PretrainResult<S> pretrain_expert(BMoEModel<S>& model, RegionId region, const std::vector<VideoSample>& samples,
                                  const LabelEmbeddingTable& table, const TrainConfig& cfg,
                                  const SampleObserver& observer = {}) {
    if (!model.expert_present(region))
        throw ContractError("pretrain_expert: model has no " + std::string(region_name(region)) + " expert");
    std::vector<std::size_t> classes;
    const auto& map = model.config().class_region_map;
    for (std::size_t c = 0; c < map.size(); ++c)
        if (map[c] == region) classes.push_back(c);
    if (classes.empty())
        throw ContractError("pretrain_expert: region " + std::string(region_name(region)) + " has no classes");
    const auto subset = region_subset(model, samples, region);
    if (subset.empty())
        throw ContractError("pretrain_expert: region " + std::string(region_name(region)) + " has no samples");
    ParamList<S> params = model.semantic_parameters();
    for (const auto& p : model.expert_parameters(region)) params.push_back(p);
    return detail::pretrain_with<S>(
        model, region, classes, subset, params,
        [&](const VideoSample& s) {
            const auto crops = extract_region_crops(s);
            return model.expert_embedding(region, crops[index_of(region)]);
        },
        table, cfg, observer);
}

/// Baseline counterpart of pretrain_expert: the single encoder over the
/// concatenated region tokens, trained on every class.
template <typename S>
PretrainResult<S> pretrain_single(BMoEModel<S>& model, const std::vector<VideoSample>& samples,
                                  const LabelEmbeddingTable& table, const TrainConfig& cfg,
                                  const SampleObserver& observer = {}) {
    if (model.config().routing != RoutingMode::Single) throw ContractError("pretrain_single: model routes over experts");
    std::vector<std::size_t> classes(model.num_classes());
    std::iota(classes.begin(), classes.end(), std::size_t{0});
    std::vector<const VideoSample*> subset;
    for (const auto& s : samples) subset.push_back(&s);
    ParamList<S> params = model.semantic_parameters();
    for (const auto& p : model.single_parameters()) params.push_back(p);
    return detail::pretrain_with<S>(
        model, std::nullopt, classes, subset, params,
        [&](const VideoSample& s) {
            const auto crops = extract_region_crops(s);
            std::vector<Tensor<S>> tokens;
            for (RegionId r : kAllRegions) tokens.push_back(model.semantic()(crops[index_of(r)].template tensor<S>()));
            return model.single_encoder()(concat_rows(tokens));
        },
        table, cfg, observer);
}

// ---------------------------------------------------------------------------
// Stage two

/// Optimises every parameter active under `mask` jointly with cross-entropy.
template <typename S>
std::vector<EpochRecord> train_end_to_end(BMoEModel<S>& model, const std::vector<VideoSample>& samples,
                                          const TrainConfig& cfg, const AblationMask& mask = {},
                                          const SampleObserver& observer = {}) {
    mask.validate();
    std::vector<const VideoSample*> all;
    for (const auto& s : samples) {
        if (s.label >= model.num_classes())
            throw ContractError("train_end_to_end: label " + std::to_string(s.label) + " exceeds head width " +
                                std::to_string(model.num_classes()));
        all.push_back(&s);
    }
    return detail::run_sgd<S>(
        all, model.parameters(mask), cfg, model.num_classes(), [](const VideoSample& s) { return s.label; },
        [&](const VideoSample& s, std::size_t& pred) {
            const auto res = model.forward(s, mask);
            pred = argmax(res.logits);
            return classification_loss(res.logits, s.label);
        },
        observer);
}

template <typename S>
MetricsReport evaluate(const BMoEModel<S>& model, const std::vector<VideoSample>& samples,
                       const AblationMask& mask = {}) {
    std::vector<std::size_t> y_true, y_pred;
    for (const auto& s : samples) {
        y_true.push_back(s.label);
        y_pred.push_back(predict(model, s, mask));
    }
    return make_report(y_true, y_pred, model.num_classes());
}

// ---------------------------------------------------------------------------
// Full pipeline and ablations

struct PipelineConfig {
    TrainConfig pretrain;
    TrainConfig train;
    bool pretrain_experts = true;
};

template <typename S>
struct PipelineResult {
    BMoEModel<S> model;
    std::vector<PretrainResult<S>> pretrain;
    std::vector<EpochRecord> log;
};

/// Builds a fresh model, pretrains the experts enabled by `mask` in region
/// order (or the single baseline encoder), then trains end to end.
template <typename S>
PipelineResult<S> train_pipeline(const ModelConfig& model_cfg, std::uint64_t model_seed,
                                 const std::vector<VideoSample>& train, const LabelEmbeddingTable& table,
                                 const PipelineConfig& cfg, const AblationMask& mask = {}) {
    mask.validate();
    PipelineResult<S> out{BMoEModel<S>(model_cfg, model_seed), {}, {}};
    if (cfg.pretrain_experts && mask.use_semantic) {
        if (model_cfg.routing == RoutingMode::Single) {
            out.pretrain.push_back(pretrain_single(out.model, train, table, cfg.pretrain));
        } else {
            for (RegionId r : kAllRegions)
                if (mask.expert_enabled[index_of(r)] && out.model.expert_present(r))
                    out.pretrain.push_back(pretrain_expert(out.model, r, train, table, cfg.pretrain));
        }
    }
    out.log = train_end_to_end(out.model, train, cfg.train, mask);
    return out;
}

enum class AblationMode { Masking, Retraining };

struct AblationRow {
    AblationMask mask;
    std::string label;
    std::optional<MetricsReport> report;
    std::string error;  // set when the mask is rejected
};

/// One report per mask. Masking mode evaluates `model` as is; retraining
/// mode trains a fresh model under each mask with `pipeline`.
template <typename S>
std::vector<AblationRow> run_ablation(const BMoEModel<S>& model, const std::vector<VideoSample>& test,
                                      const std::vector<AblationMask>& masks, AblationMode mode = AblationMode::Masking,
                                      const std::vector<VideoSample>* train = nullptr,
                                      const LabelEmbeddingTable* table = nullptr, const PipelineConfig* pipeline = nullptr,
                                      std::uint64_t model_seed = 0) {
    if (mode == AblationMode::Retraining && (!train || !table || !pipeline))
        throw ContractError("run_ablation: retraining needs training data, label embeddings and a pipeline");
    std::vector<AblationRow> rows;
    for (const auto& m : masks) {
        AblationRow row{m, "", std::nullopt, ""};
        try {
            m.validate();
            row.label = m.label();
            if (mode == AblationMode::Masking) {
                row.report = evaluate(model, test, m);
            } else {
                auto trained = train_pipeline<S>(model.config(), model_seed, *train, *table, *pipeline, m);
                row.report = evaluate(trained.model, test, m);
            }
        } catch (const ContractError& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Full model plus one row per dropped expert.
inline std::vector<AblationMask> expert_ablation_masks() {
    std::vector<AblationMask> out{AblationMask::all_on()};
    for (RegionId r : kAllRegions) out.push_back(AblationMask::without_expert(r));
    return out;
}

/// Semantic only, motion only, both.
inline std::vector<AblationMask> stream_ablation_masks() {
    return {AblationMask::semantic_only(), AblationMask::motion_only(), AblationMask::all_on()};
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "configuration,semantic,motion,head,body,upper_limb,lower_limb,top1,f1_macro,error\n"
       << std::setprecision(6);
    for (const auto& r : rows) {
        os << '"' << r.label << "\"," << r.mask.use_semantic << ',' << r.mask.use_motion;
        for (bool e : r.mask.expert_enabled) os << ',' << e;
        if (r.report) os << ',' << r.report->top1 << ',' << r.report->f1_macro << ",";
        else os << ",,,\"" << r.error << '"';
        os << '\n';
    }
    return os.str();
}

}  // namespace bmoe
