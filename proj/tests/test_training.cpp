#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bmoe/experiment.hpp"
#include "bmoe/gradcheck_suite.hpp"

using namespace bmoe;
using Model = BMoEModel<double>;
using T64 = Tensor<double>;

namespace {

DatasetConfig small_data(std::size_t per_class) {
    auto d = presets::separable(7, per_class);
    d.clip_length = 6;
    d.height = 8;
    d.width = 8;
    return d;
}

LabelEmbeddingTable small_table(const DatasetConfig& d) {
    std::vector<std::vector<std::string>> words;
    for (const auto& c : d.classes) words.push_back(c.name);
    return build_label_embeddings(words, {}, 16, 0);
}

TrainConfig quick(std::size_t epochs, double lr) {
    TrainConfig t;
    t.epochs = epochs;
    t.base_lr = lr;
    t.milestones = TrainConfig::scaled_milestones(epochs);
    t.batch_size = 4;
    t.grad_clip = 5.0;
    t.seed = 3;
    return t;
}

std::vector<std::vector<double>> snapshot(const ParamList<double>& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params) out.push_back(p.tensor.data());
    return out;
}

}  // namespace

TEST(Losses, CrossEntropyExamples) {
    EXPECT_NEAR(classification_loss(T64({4}, {0, 0, 0, 0}), 2).item(), std::log(4.0), 1e-12);
    EXPECT_NEAR(classification_loss(T64({2}, {std::log(3.0), 0.0}), 0).item(), std::log(4.0 / 3.0), 1e-12);
    // Stable for large logits.
    EXPECT_NEAR(classification_loss(T64({2}, {1000.0, 0.0}), 1).item(), 1000.0, 1e-9);
    EXPECT_THROW(classification_loss(T64({3}, {0, 0, 0}), 3), ContractError);
}

TEST(Losses, EmbeddingAlignmentExamples) {
    EXPECT_EQ(embedding_alignment_loss(T64({3}, {1, 2, 3}), T64({3}, {1, 2, 3})).item(), 0.0);
    EXPECT_EQ(embedding_alignment_loss(T64({2}, {1, 1}), T64({2}, {0, 0})).item(), 2.0);
    EXPECT_NEAR(embedding_alignment_loss(T64({3}, {0.5, -1, 2}), T64({3}, {1.5, 0, 1})).item(), 3.0, 1e-12);
    EXPECT_THROW(embedding_alignment_loss(T64({3}, {0, 0, 0}), T64({2}, {0, 0})), DimensionError);
}

TEST(Losses, CombinedLossIsLinearInAlpha) {
    EXPECT_EQ(combined_loss(1.0, 0.02, 50.0), 2.0);
    EXPECT_EQ(combined_loss(0.7, 0.3, 0.0), 0.7);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const float l_cls = static_cast<float>(rng.uniform(0, 5)), l_emb = static_cast<float>(rng.uniform(0, 1));
        const float a = static_cast<float>(rng.uniform(0, 100));
        auto L = [&](float alpha) {
            return combined_loss(Tensor<float>({1}, {l_cls}), Tensor<float>({1}, {l_emb}), alpha).item();
        };
        const double lhs = L(2 * a) - L(a), rhs = L(a) - L(0);
        EXPECT_LT(std::abs(lhs - rhs) / std::max(1e-12, std::abs(rhs) + L(a)), 1e-6);
    }
    EXPECT_THROW(combined_loss(T64({2}, {1, 1}), T64({1}, {1}), 1.0), DimensionError);
}

TEST(LabelEmbeddings, MeanOfWordVectors) {
    std::istringstream in("nod 1 0 2\n\nup 3 2 0\n");
    const auto vecs = parse_word_vectors(in);
    const auto t = build_label_embeddings({{"nod", "up"}, {"up"}, {"nod", "missing"}}, vecs, 300, 0);
    EXPECT_EQ(t.dim, 3u);
    EXPECT_EQ(t.vectors[0], (std::vector<double>{2, 1, 1}));
    EXPECT_EQ(t.vectors[1], (std::vector<double>{3, 2, 0}));
    EXPECT_EQ(t.sources[0], EmbeddingSource::File);
    EXPECT_EQ(t.sources[2], EmbeddingSource::Fallback);
    const auto fb = fallback_word_vector("missing", 3, 0);
    const double nod[3] = {1, 0, 2};
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(t.vectors[2][i], (nod[i] + fb[i]) / 2.0);
    EXPECT_THROW(build_label_embeddings({{}}, {}, 4), ContractError);
}

TEST(LabelEmbeddings, FallbackIsDeterministicUnitNorm) {
    const auto a = fallback_word_vector("wave", 300, 5), b = fallback_word_vector("wave", 300, 5);
    EXPECT_EQ(a, b);
    double n = 0.0;
    for (double x : a) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
    EXPECT_NE(fallback_word_vector("wave", 300, 6), a);
    EXPECT_NE(fallback_word_vector("nod", 300, 5), a);
}

TEST(LabelEmbeddings, ParseErrorsCarryTheLine) {
    auto line_of = [](const std::string& text) -> std::size_t {
        std::istringstream in(text);
        try {
            parse_word_vectors(in, "vec.txt");
        } catch (const ParseError& e) {
            EXPECT_EQ(std::string(e.what()).rfind("vec.txt:", 0), 0u) << e.what();
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("a 1 2\n\nb 1 x\n"), 3u);
    EXPECT_EQ(line_of("a 1 2\nb 1 2 3\n"), 2u);
    EXPECT_EQ(line_of("a\n"), 1u);
    EXPECT_EQ(line_of("a 1 nan\n"), 1u);
    EXPECT_EQ(line_of("a 1 2\n"), 0u);
}

TEST(TrainConfig, ScaledMilestones) {
    EXPECT_EQ(TrainConfig::scaled_milestones(100), (std::vector<std::size_t>{30, 60}));
    EXPECT_EQ(TrainConfig::scaled_milestones(10), (std::vector<std::size_t>{3, 6}));
    EXPECT_EQ(TrainConfig::scaled_milestones(20), (std::vector<std::size_t>{6, 12}));
    EXPECT_EQ(TrainConfig::scaled_milestones(5), (std::vector<std::size_t>{2, 3}));
    TrainConfig t;
    t.momentum = 1.0;
    t.epochs = 0;
    try {
        t.validate();
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.violations().size(), 2u);
    }
}

class TrainingTest : public ::testing::Test {
protected:
    DatasetConfig data = small_data(4);
    std::vector<VideoSample> samples = generate_dataset(data);
    LabelEmbeddingTable table = small_table(data);
    ModelConfig cfg = bind_model(GradCheckDims{}.model_config(), data);
};

TEST_F(TrainingTest, PretrainTouchesOnlyItsRegion) {
    // Classes 4, 5 and 6 belong to the upper limb here.
    cfg.class_region_map[6] = RegionId::UpperLimb;
    Model m(cfg, 1);
    const auto others = snapshot(m.expert_parameters(RegionId::Head));
    const auto motion = snapshot(m.parameters(AblationMask::motion_only()));
    const auto semantic = snapshot(m.semantic_parameters());
    const auto upper = snapshot(m.expert_parameters(RegionId::UpperLimb));
    std::size_t seen = 0;
    const auto res = pretrain_expert(m, RegionId::UpperLimb, samples, table, quick(2, 0.01), [&](const VideoSample& s) {
        EXPECT_EQ(cfg.class_region_map[s.label], RegionId::UpperLimb);
        ++seen;
    });
    EXPECT_EQ(seen, 2u * 12u);
    EXPECT_EQ(res.classes, (std::vector<std::size_t>{4, 5, 6}));
    EXPECT_EQ(res.classifier.weight.dim(1), 3u);
    EXPECT_EQ(res.log.size(), 2u);
    EXPECT_EQ(snapshot(m.expert_parameters(RegionId::Head)), others);
    EXPECT_EQ(snapshot(m.parameters(AblationMask::motion_only())), motion);
    EXPECT_NE(snapshot(m.semantic_parameters()), semantic);
    EXPECT_NE(snapshot(m.expert_parameters(RegionId::UpperLimb)), upper);
}

TEST_F(TrainingTest, PretrainLossDecreases) {
    Model m(cfg, 2);
    const auto res = pretrain_expert(m, RegionId::Head, samples, table, quick(5, 0.01));
    ASSERT_EQ(res.log.size(), 5u);
    EXPECT_LT(res.log[4].loss, res.log[0].loss);
    EXPECT_EQ(res.log[0].lr, 0.01);
    EXPECT_NEAR(res.log[2].lr, 0.001, 1e-15);
    EXPECT_NEAR(res.log[4].lr, 0.0001, 1e-15);
}

TEST_F(TrainingTest, PretrainRejectsEmptyRegions) {
    cfg.class_region_map[6] = cfg.class_region_map[7] = RegionId::Head;
    Model m(cfg, 1);
    EXPECT_THROW(pretrain_expert(m, RegionId::LowerLimb, samples, table, quick(1, 0.01)), ContractError);
    auto reduced = cfg;
    reduced.experts_present[0] = false;
    Model r(reduced, 1);
    EXPECT_THROW(pretrain_expert(r, RegionId::Head, samples, table, quick(1, 0.01)), ContractError);
    EXPECT_THROW(pretrain_single(r, samples, table, quick(1, 0.01)), ContractError);
}

TEST_F(TrainingTest, EndToEndLogAndDeterminism) {
    Model a(cfg, 4), b(cfg, 4);
    const auto la = train_end_to_end(a, samples, quick(3, 0.01));
    const auto lb = train_end_to_end(b, samples, quick(3, 0.01));
    ASSERT_EQ(la.size(), 3u);
    EXPECT_EQ(la, lb);
    EXPECT_EQ(snapshot(a.parameters()), snapshot(b.parameters()));
    for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(la[e].epoch, e);
    const auto line = epoch_log_jsonl(la);
    EXPECT_EQ(std::count(line.begin(), line.end(), '\n'), 3);
    EXPECT_NE(line.find("\"f1_macro\""), std::string::npos);
}

TEST_F(TrainingTest, ZeroLearningRateLeavesParameters) {
    Model m(cfg, 5);
    const auto before = snapshot(m.parameters());
    train_end_to_end(m, samples, quick(1, 0.0));
    EXPECT_EQ(snapshot(m.parameters()), before);
}

TEST_F(TrainingTest, MaskedTrainingLeavesDisabledParts) {
    Model m(cfg, 6);
    const auto body = snapshot(m.expert_parameters(RegionId::Body));
    const auto mask = AblationMask::without_expert(RegionId::Body);
    train_end_to_end(m, samples, quick(1, 0.01), mask);
    EXPECT_EQ(snapshot(m.expert_parameters(RegionId::Body)), body);
}

TEST_F(TrainingTest, LabelsBeyondTheHeadAreRejected) {
    Model m(cfg, 7);
    auto bad = samples;
    bad[0].label = 8;
    EXPECT_THROW(train_end_to_end(m, bad, quick(1, 0.01)), ContractError);
    EXPECT_THROW(train_end_to_end(m, std::vector<VideoSample>{}, quick(1, 0.01)), ContractError);
}

TEST_F(TrainingTest, NonFiniteLossStopsTraining) {
    Model m(cfg, 8);
    auto bad = samples;
    bad[3].frames[0] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train_end_to_end(m, bad, quick(1, 0.01)), TrainingDiverged);
}

TEST_F(TrainingTest, PipelineWithSingleBaseline) {
    cfg.routing = RoutingMode::Single;
    PipelineConfig pc{quick(1, 0.01), quick(1, 0.01), true};
    const auto res = train_pipeline<double>(cfg, 9, samples, table, pc);
    ASSERT_EQ(res.pretrain.size(), 1u);
    EXPECT_FALSE(res.pretrain[0].region.has_value());
    EXPECT_EQ(res.pretrain[0].classes.size(), 8u);
    EXPECT_EQ(res.log.size(), 1u);
}
