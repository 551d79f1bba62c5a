#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bmoe/experiment.hpp"

using namespace bmoe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("bmoe_exp_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::vector<std::string> violations_of(const json& j) {
    try {
        experiment_from_json(j);
    } catch (const ValidationError& e) {
        return e.violations();
    }
    return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
    for (const auto& s : v)
        if (s.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST(Experiment, EmptyObjectGivesDefaults) {
    const auto e = experiment_from_json(json::object());
    const auto d = presets::default_experiment();
    EXPECT_EQ(to_json(e), to_json(d));
    EXPECT_EQ(e.seed, 2u);
    EXPECT_EQ(e.pipeline.train.seed, 2u);
    EXPECT_EQ(e.pipeline.train.grad_clip, 5.0);
    EXPECT_EQ(e.pipeline.pretrain.milestones, (std::vector<std::size_t>{3, 6}));
}

TEST(Experiment, JsonRoundTrip) {
    auto e = presets::default_experiment();
    e.model.routing = RoutingMode::Single;
    e.model.experts_present = {true, false, true, true};
    e.pipeline.train.epochs = 7;
    e.pipeline.train.milestones = {1, 5};
    e.test_fraction = 0.25;
    e.set_seed(99);
    const auto back = experiment_from_json(to_json(e));
    EXPECT_EQ(to_json(back), to_json(e));
    EXPECT_EQ(back.model.routing, RoutingMode::Single);
    EXPECT_EQ(back.pipeline.pretrain.seed, 99u);
}

TEST(Experiment, MissingMilestonesFollowEpochs) {
    const auto e = experiment_from_json({{"train", {{"epochs", 50}}}});
    EXPECT_EQ(e.pipeline.train.milestones, (std::vector<std::size_t>{15, 30}));
}

TEST(Experiment, StrictParsingCollectsEveryProblem) {
    const auto v = violations_of({{"learning_rate", 1},
                                  {"model", {{"model_dim", 30}, {"routing", "mixture"}, {"depth", 2}}},
                                  {"train", {{"momentum", 1.5}}},
                                  {"test_fraction", 1.0}});
    EXPECT_TRUE(mentions(v, "learning_rate")) << v.size();
    EXPECT_TRUE(mentions(v, "model.routing \"mixture\""));
    EXPECT_TRUE(mentions(v, "depth"));
    EXPECT_TRUE(mentions(v, "train: momentum"));
    EXPECT_TRUE(mentions(v, "test_fraction"));

    EXPECT_TRUE(mentions(violations_of({{"model", {{"experts_present", {"head", "tail"}}}}}), "\"tail\" is not a region"));
    EXPECT_TRUE(mentions(violations_of({{"seed", "two"}}), "seed"));
    EXPECT_TRUE(mentions(violations_of({{"model", {{"model_dim", 30}}}}), "model: "));
    EXPECT_FALSE(violations_of(json::array()).empty());

    auto data = to_json(presets::separable());
    data["classes"][0]["region"] = "elbow";
    EXPECT_TRUE(mentions(violations_of({{"data", data}}), "data.classes[0].region \"elbow\""));
}

TEST(Experiment, LoadReportsMalformedFiles) {
    const auto dir = temp_dir("load");
    const auto path = dir + "/bad.json";
    std::ofstream(path) << "{\"seed\": 3,";
    try {
        load_experiment(path);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
    }
    EXPECT_THROW(load_experiment(dir + "/missing.json"), IoError);
    std::ofstream(dir + "/good.json") << "{\"seed\": 3}";
    EXPECT_EQ(load_experiment(dir + "/good.json").seed, 3u);
}

TEST(Experiment, SnapshotWritesResolvedConfig) {
    auto e = presets::default_experiment();
    e.output_dir = temp_dir("snap") + "/nested";
    const auto path = snapshot_experiment(e);
    std::ifstream in(path);
    EXPECT_EQ(json::parse(in), to_json(e));
}

TEST(Experiment, PrepareDataFromFileAndWordVectors) {
    const auto dir = temp_dir("prepare");
    auto cfg = presets::separable(5, 5);
    cfg.clip_length = 6, cfg.height = 8, cfg.width = 8;
    save_dataset(generate_dataset(cfg), dir + "/d.bmds", &cfg);
    std::ofstream(dir + "/vec.txt") << "nod 1 0\nup 0 1\n";

    auto e = presets::default_experiment();
    e.data_config.reset();
    e.data_path = dir + "/d.bmds";
    e.word_vectors = dir + "/vec.txt";
    const auto d = prepare_data(e);
    EXPECT_EQ(d.samples.size(), 40u);
    EXPECT_EQ(d.split.test.size(), 8u);
    EXPECT_EQ(d.model.num_classes, 8u);
    EXPECT_EQ(d.model.class_region_map, cfg.class_region_map());
    EXPECT_EQ(d.table.dim, 2u);
    EXPECT_EQ(d.table.vectors[0], (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(d.table.sources[0], EmbeddingSource::File);

    // A dataset whose labels exceed the sidecar's class list is rejected.
    auto fewer = cfg;
    fewer.classes.pop_back();
    fewer.classes[6].region = RegionId::LowerLimb;
    save_dataset(generate_dataset(cfg), dir + "/e.bmds", &fewer);
    e.data_path = dir + "/e.bmds";
    EXPECT_THROW(prepare_data(e), ValidationError);
}
