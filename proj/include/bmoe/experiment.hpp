#pragma once

// JSON experiment description shared by every CLI command. Parsing is
// strict: unknown keys, wrong types and out-of-range values are collected
// and reported together before any work starts.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bmoe/data/io.hpp"
#include "bmoe/training.hpp"

namespace bmoe {

struct ExperimentConfig {
    /// Either a generator config or the path of a dataset file (whose
    /// sidecar supplies the class list).
    std::optional<DatasetConfig> data_config;
    std::string data_path;
    ModelConfig model;  // num_classes, channels and class_region_map come from the data
    PipelineConfig pipeline;
    double test_fraction = 0.2;
    std::string word_vectors;  // empty: deterministic fallback vectors
    std::size_t embedding_dim = 300;
    std::string output_dir = "bmoe_run";
    std::uint64_t seed = 1;

    /// Model seed and both training stages follow the top-level seed.
    void set_seed(std::uint64_t s) {
        seed = s;
        pipeline.pretrain.seed = s;
        pipeline.train.seed = s;
    }
};

namespace presets {

/// Width used by the acceptance runs: small enough for a few CPU minutes.
inline ModelConfig compact_model() {
    ModelConfig m;
    m.model_dim = 16;
    m.semantic_depth = 1;
    m.motion_stem = 4;
    m.motion_stages = {8, 12};
    m.head_hidden = 32;
    return m;
}

/// Pretrain 10 epochs at 3e-3, then 20 end-to-end epochs at 1e-2, both
/// with factor-10 decays at 30% and 60% of the run and gradients clipped
/// to norm 5.
inline PipelineConfig compact_pipeline(std::size_t train_epochs = 20) {
    PipelineConfig p;
    p.pretrain.base_lr = 0.003;
    p.pretrain.epochs = 10;
    p.pretrain.milestones = TrainConfig::scaled_milestones(10);
    p.train.base_lr = 0.01;
    p.train.epochs = train_epochs;
    p.train.milestones = TrainConfig::scaled_milestones(train_epochs);
    p.pretrain.grad_clip = p.train.grad_clip = 5.0;
    return p;
}

inline ExperimentConfig default_experiment() {
    ExperimentConfig e;
    e.data_config = separable();
    e.model = compact_model();
    e.pipeline = compact_pipeline();
    e.set_seed(2);
    return e;
}

}  // namespace presets

/// Fills the data-dependent model fields.
inline ModelConfig bind_model(ModelConfig m, const DatasetConfig& data) {
    m.num_classes = data.num_classes();
    m.channels = data.channels;
    m.class_region_map = data.class_region_map();
    return m;
}

inline nlohmann::json to_json(const ModelConfig& m) {
    nlohmann::json present = nlohmann::json::array();
    for (RegionId r : kAllRegions)
        if (m.experts_present[index_of(r)]) present.push_back(std::string(region_name(r)));
    return {{"model_dim", m.model_dim},       {"patch_grid", m.patch_grid},
            {"semantic_depth", m.semantic_depth}, {"semantic_heads", m.semantic_heads},
            {"expert_heads", m.expert_heads}, {"expert_depth", m.expert_depth},
            {"sgp_window", m.sgp_window},     {"sgp_scale_k", m.sgp_scale_k},
            {"motion_stem", m.motion_stem},   {"motion_stages", m.motion_stages},
            {"se_reduction", m.se_reduction}, {"tsm_fraction", m.tsm_fraction},
            {"te_depth", m.te_depth},         {"te_heads", m.te_heads},
            {"head_hidden", m.head_hidden},
            {"routing", m.routing == RoutingMode::Experts ? "experts" : "single"},
            {"experts_present", present}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"alpha", t.alpha},           {"base_lr", t.base_lr},       {"momentum", t.momentum},
            {"weight_decay", t.weight_decay}, {"batch_size", t.batch_size}, {"milestones", t.milestones},
            {"decay_factor", t.decay_factor}, {"epochs", t.epochs},         {"grad_clip", t.grad_clip}};
}

inline nlohmann::json to_json(const ExperimentConfig& e) {
    nlohmann::json j;
    if (e.data_config) j["data"] = to_json(*e.data_config);
    else j["data"] = e.data_path;
    j["model"] = to_json(e.model);
    j["pretrain"] = to_json(e.pipeline.pretrain);
    j["train"] = to_json(e.pipeline.train);
    j["pretrain_experts"] = e.pipeline.pretrain_experts;
    j["test_fraction"] = e.test_fraction;
    j["word_vectors"] = e.word_vectors;
    j["embedding_dim"] = e.embedding_dim;
    j["output_dir"] = e.output_dir;
    j["seed"] = e.seed;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig m, const std::string& where,
                                          std::vector<std::string>& v) {
    using namespace json_detail;
    check_keys(j,
               {"model_dim", "patch_grid", "semantic_depth", "semantic_heads", "expert_heads", "expert_depth",
                "sgp_window", "sgp_scale_k", "motion_stem", "motion_stages", "se_reduction", "tsm_fraction",
                "te_depth", "te_heads", "head_hidden", "routing", "experts_present"},
               where, v);
    if (!j.is_object()) return m;
    read(j, "model_dim", m.model_dim, where, v);
    read(j, "patch_grid", m.patch_grid, where, v);
    read(j, "semantic_depth", m.semantic_depth, where, v);
    read(j, "semantic_heads", m.semantic_heads, where, v);
    read(j, "expert_heads", m.expert_heads, where, v);
    read(j, "expert_depth", m.expert_depth, where, v);
    read(j, "sgp_window", m.sgp_window, where, v);
    read(j, "sgp_scale_k", m.sgp_scale_k, where, v);
    read(j, "motion_stem", m.motion_stem, where, v);
    read(j, "motion_stages", m.motion_stages, where, v);
    read(j, "se_reduction", m.se_reduction, where, v);
    read(j, "tsm_fraction", m.tsm_fraction, where, v);
    read(j, "te_depth", m.te_depth, where, v);
    read(j, "te_heads", m.te_heads, where, v);
    read(j, "head_hidden", m.head_hidden, where, v);
    if (j.contains("routing")) {
        std::string s;
        read(j, "routing", s, where, v);
        if (s == "experts") m.routing = RoutingMode::Experts;
        else if (s == "single") m.routing = RoutingMode::Single;
        else v.push_back(where + ".routing \"" + s + "\" is not experts or single");
    }
    if (j.contains("experts_present")) {
        std::vector<std::string> names;
        read(j, "experts_present", names, where, v);
        m.experts_present = {false, false, false, false};
        for (const auto& n : names) {
            if (auto r = parse_region(n)) m.experts_present[index_of(*r)] = true;
            else v.push_back(where + ".experts_present: \"" + n + "\" is not a region");
        }
    }
    return m;
}

/// A missing "milestones" key means 30% and 60% of the configured epochs.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig t, const std::string& where,
                                          std::vector<std::string>& v) {
    using namespace json_detail;
    check_keys(j, {"alpha", "base_lr", "momentum", "weight_decay", "batch_size", "milestones", "decay_factor", "epochs",
                   "grad_clip"},
               where, v);
    if (!j.is_object()) return t;
    read(j, "alpha", t.alpha, where, v);
    read(j, "base_lr", t.base_lr, where, v);
    read(j, "momentum", t.momentum, where, v);
    read(j, "weight_decay", t.weight_decay, where, v);
    read(j, "batch_size", t.batch_size, where, v);
    read(j, "decay_factor", t.decay_factor, where, v);
    read(j, "epochs", t.epochs, where, v);
    read(j, "grad_clip", t.grad_clip, where, v);
    if (j.contains("milestones")) read(j, "milestones", t.milestones, where, v);
    else t.milestones = TrainConfig::scaled_milestones(t.epochs);
    for (const auto& s : t.violations()) v.push_back(where + ": " + s);
    return t;
}

/// Missing sections keep the defaults of presets::default_experiment().
/// Throws ValidationError listing every problem.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    using namespace json_detail;
    std::vector<std::string> v;
    ExperimentConfig e = presets::default_experiment();
    check_keys(j,
               {"data", "model", "train", "pretrain", "pretrain_experts", "test_fraction", "word_vectors",
                "embedding_dim", "output_dir", "seed"},
               "config", v);
    if (!j.is_object()) throw ValidationError(std::move(v));
    if (j.contains("data")) {
        if (j["data"].is_string()) {
            e.data_config.reset();
            e.data_path = j["data"].get<std::string>();
        } else {
            std::vector<std::string> dv;
            DatasetConfig d = dataset_config_from_json(j["data"], "data", dv);
            if (dv.empty())
                for (const auto& s : d.violations()) dv.push_back("data: " + s);
            v.insert(v.end(), dv.begin(), dv.end());
            e.data_config = std::move(d);
        }
    }
    if (j.contains("model")) e.model = model_config_from_json(j["model"], e.model, "model", v);
    if (j.contains("pretrain")) e.pipeline.pretrain = train_config_from_json(j["pretrain"], e.pipeline.pretrain, "pretrain", v);
    if (j.contains("train")) e.pipeline.train = train_config_from_json(j["train"], e.pipeline.train, "train", v);
    read(j, "pretrain_experts", e.pipeline.pretrain_experts, "config", v);
    read(j, "test_fraction", e.test_fraction, "config", v);
    read(j, "word_vectors", e.word_vectors, "config", v);
    read(j, "embedding_dim", e.embedding_dim, "config", v);
    read(j, "output_dir", e.output_dir, "config", v);
    std::uint64_t seed = e.seed;
    read(j, "seed", seed, "config", v);
    e.set_seed(seed);
    if (!(e.test_fraction >= 0.0 && e.test_fraction < 1.0)) v.push_back("config.test_fraction must lie in [0, 1)");
    if (e.embedding_dim < 1) v.push_back("config.embedding_dim must be >= 1");
    if (e.data_config && v.empty())
        for (const auto& s : bind_model(e.model, *e.data_config).violations()) v.push_back("model: " + s);
    if (!v.empty()) throw ValidationError(std::move(v));
    return e;
}

/// Malformed JSON is reported as a ValidationError too.
inline ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& err) {
        throw ValidationError({path + ": " + err.what()});
    }
    return experiment_from_json(j);
}

/// Writes the resolved config to output_dir/config.json.
inline std::string snapshot_experiment(const ExperimentConfig& e) {
    std::filesystem::create_directories(e.output_dir);
    const std::string path = (std::filesystem::path(e.output_dir) / "config.json").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json(e).dump(2) << '\n';
    return path;
}

struct ExperimentData {
    DatasetConfig config;
    std::vector<VideoSample> samples;
    DatasetSplit split;
    LabelEmbeddingTable table;
    ModelConfig model;  // bound to the data
};

/// Generates or loads the dataset, splits it and builds label embeddings.
inline ExperimentData prepare_data(const ExperimentConfig& e) {
    ExperimentData d;
    if (e.data_config) {
        d.config = *e.data_config;
        d.samples = generate_dataset(d.config);
    } else {
        d.config = load_dataset_sidecar(e.data_path);
        d.samples = load_dataset(e.data_path);
    }
    d.model = bind_model(e.model, d.config);
    d.model.validate();
    for (const auto& s : d.samples)
        if (s.label >= d.config.num_classes())
            throw ValidationError({"dataset sample has label " + std::to_string(s.label) + " but only " +
                                   std::to_string(d.config.num_classes()) + " classes are configured"});
    d.split = split_dataset(d.samples, d.config.num_classes(), e.test_fraction);
    std::vector<std::vector<std::string>> words;
    for (const auto& c : d.config.classes) words.push_back(c.name);
    const WordVectors vectors = e.word_vectors.empty() ? WordVectors{} : load_word_vectors(e.word_vectors);
    d.table = build_label_embeddings(words, vectors, e.embedding_dim, e.seed);
    return d;
}

}  // namespace bmoe
