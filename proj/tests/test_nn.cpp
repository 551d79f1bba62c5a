#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bmoe/gradcheck.hpp"
#include "bmoe/nn/attention.hpp"
#include "bmoe/nn/blocks.hpp"

using namespace bmoe;
using T64 = Tensor<double>;

namespace {

T64 rand_t(Shape shape, Rng& rng, bool grad = false) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.uniform(-1.0, 1.0);
    return T64(std::move(shape), std::move(d), grad);
}

void randomize(const ParamList<double>& params, Rng& rng) {
    for (auto p : params)
        for (auto& v : p.tensor.mutable_data()) v = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST(AttentionConfig, Validation) {
    EXPECT_THROW((nn::AttentionConfig{10, 4, false}.validate()), ContractError);
    EXPECT_THROW((nn::AttentionConfig{8, 2, true}.validate()), ContractError);
    EXPECT_NO_THROW((nn::AttentionConfig{8, 2, false}.validate()));
    EXPECT_EQ((nn::AttentionConfig{32, 4, false}.head_dim()), 8u);
}

TEST(SelfAttention, SingleTokenIdentity) {
    Rng rng(1);
    nn::MultiHeadSelfAttention<double> mhsa({6, 1, true}, rng);
    auto x = rand_t({1, 6}, rng);
    EXPECT_EQ(mhsa(x).data(), x.data());
}

TEST(SelfAttention, IdenticalRowsGiveIdenticalOutputs) {
    Rng rng(2);
    nn::MultiHeadSelfAttention<double> mhsa({4, 1, true}, rng);
    T64 x({3, 4}, {1, 2, 3, 4, 1, 2, 3, 4, -1, 0, 2, 1});
    const auto y = mhsa(x);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y.at(0, c), y.at(1, c));
}

TEST(SelfAttention, WeightRowsSumToOne) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        nn::MultiHeadSelfAttention<double> mhsa({8, 2, false}, rng);
        const auto res = mhsa.forward(rand_t({4, 8}, rng));
        ASSERT_EQ(res.weights.size(), 2u * 4 * 4);
        for (std::size_t row = 0; row < 2 * 4; ++row) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_GE(res.weights[row * 4 + j], 0.0);
                s += res.weights[row * 4 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
        EXPECT_EQ(res.output.shape(), (Shape{4, 8}));
    }
}

TEST(SelfAttention, WidthMismatch) {
    Rng rng(4);
    nn::MultiHeadSelfAttention<double> mhsa({8, 2, false}, rng);
    EXPECT_THROW(mhsa(rand_t({4, 6}, rng)), DimensionError);
}

TEST(CrossAttention, SingleRowReturnsValue) {
    Rng rng(5);
    nn::CrossAttention<double> ca({4, 1, true}, rng);
    T64 kv({1, 4}, {0.5, -1, 2, 3});
    const auto res = ca.forward(rand_t({4}, rng), kv);
    EXPECT_EQ(res.output.data(), kv.data());
    EXPECT_EQ(res.weights, (std::vector<double>{1.0}));
}

TEST(CrossAttention, IdenticalRowsIgnoreQuery) {
    Rng rng(6);
    nn::CrossAttention<double> ca({3, 1, true}, rng);
    T64 kv({3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
    for (int i = 0; i < 5; ++i) {
        const auto out = ca.forward(rand_t({3}, rng), kv).output;
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c], kv.at(0, c), 1e-15);
    }
}

TEST(CrossAttention, OrthogonalQueryGivesUniformWeights) {
    Rng rng(7);
    nn::CrossAttention<double> ca({3, 1, true}, rng);
    // Keys of equal norm in the x-y plane; query along z.
    T64 kv({3, 3}, {1, 0, 0, 0, 1, 0, -1, 0, 0});
    const auto res = ca.forward(T64({3}, {0, 0, 2}), kv);
    for (double w : res.weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(res.output[0], 0.0, 1e-15);
    EXPECT_NEAR(res.output[1], 1.0 / 3.0, 1e-15);
}

TEST(CrossAttention, WeightsFormADistributionAndPermuteWithRows) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        nn::CrossAttention<double> ca({6, 1, false}, rng);
        const std::size_t K = static_cast<std::size_t>(rng.integer(1, 5));
        auto kv = rand_t({K, 6}, rng);
        auto q = rand_t({6}, rng);
        const auto res = ca.forward(q, kv);
        double s = 0.0;
        for (double w : res.weights) {
            EXPECT_GE(w, 0.0);
            s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);

        std::vector<std::size_t> perm(K);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        std::vector<double> permuted(K * 6);
        for (std::size_t i = 0; i < K; ++i)
            std::copy_n(kv.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * 6), 6, permuted.begin() + static_cast<std::ptrdiff_t>(i * 6));
        const auto res_p = ca.forward(q, T64({K, 6}, permuted));
        EXPECT_EQ(res_p.output.data(), res.output.data());
        for (std::size_t i = 0; i < K; ++i) EXPECT_EQ(res_p.weights[i], res.weights[perm[i]]);
    }
}

TEST(CrossAttention, RejectsMultipleHeadsAndBadShapes) {
    Rng rng(9);
    EXPECT_THROW(nn::CrossAttention<double>({8, 2, false}, rng), ContractError);
    nn::CrossAttention<double> ca({4, 1, false}, rng);
    EXPECT_THROW(ca.forward(rand_t({3}, rng), rand_t({2, 4}, rng)), DimensionError);
    // An empty key set cannot even be built: zero extents are rejected.
    EXPECT_THROW(T64::zeros({0, 4}), DimensionError);
}

TEST(SqueezeExcitation, ZeroWeightsHalveInput) {
    Rng rng(10);
    auto se = nn::SqueezeExcitation<double>::zeros({8, 4});
    auto x = rand_t({5, 8}, rng);
    const auto y = se(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], 0.5 * x[i]);
}

TEST(SqueezeExcitation, ZeroInputGivesZero) {
    Rng rng(11);
    nn::SqueezeExcitation<double> se({8, 2}, rng);
    randomize([&] { ParamList<double> p; se.collect("se", p); return p; }(), rng);
    const auto y = se(T64::zeros({3, 8}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SqueezeExcitation, GateNeverAmplifies) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        nn::SqueezeExcitation<double> se({8, 4}, rng);
        ParamList<double> p;
        se.collect("se", p);
        randomize(p, rng);
        auto x = rand_t({6, 8}, rng);
        const auto y = se(x);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y[i]), std::abs(x[i]));
    }
}

TEST(SqueezeExcitation, ConfigAndShapeErrors) {
    EXPECT_THROW((nn::SeConfig{6, 4}.validate()), ContractError);
    EXPECT_THROW((nn::SeConfig{2, 4}.validate()), ContractError);
    Rng rng(13);
    nn::SqueezeExcitation<double> se({8, 4}, rng);
    EXPECT_THROW(se(rand_t({3, 4}, rng)), DimensionError);
}

TEST(TemporalShift, OnesExample) {
    const auto y = nn::temporal_shift(T64::full({3, 4}, 1.0), nn::TsmConfig{0.25, 4});
    // Channel 0 takes the next frame, channel 1 the previous one.
    EXPECT_EQ((std::vector<double>{y.at(0, 0), y.at(1, 0), y.at(2, 0)}), (std::vector<double>{1, 1, 0}));
    EXPECT_EQ((std::vector<double>{y.at(0, 1), y.at(1, 1), y.at(2, 1)}), (std::vector<double>{0, 1, 1}));
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_EQ(y.at(t, 2), 1.0);
        EXPECT_EQ(y.at(t, 3), 1.0);
    }
}

TEST(TemporalShift, SingleFrameZeroesShiftedChannels) {
    const auto y = nn::temporal_shift(T64({1, 4}, {1, 2, 3, 4}), nn::TsmConfig{0.25, 4});
    EXPECT_EQ(y.data(), (std::vector<double>{0, 0, 3, 4}));
}

TEST(TemporalShift, LeftThenRightRestoresInterior) {
    Rng rng(14);
    const std::size_t T = 7, C = 8;
    auto x = rand_t({T, C}, rng);
    const auto left = bmoe::temporal_shift(x, 2);
    // Swap the two shifted groups so the second shift moves each group back.
    std::vector<double> swapped(left.data());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < 2; ++c) std::swap(swapped[t * C + c], swapped[t * C + 2 + c]);
    const auto back = bmoe::temporal_shift(T64({T, C}, swapped), 2);
    for (std::size_t t = 1; t + 1 < T; ++t)
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_EQ(back.at(t, 2 + c), x.at(t, c));
            EXPECT_EQ(back.at(t, c), x.at(t, 2 + c));
        }
}

TEST(TemporalShift, ZeroFilledSlotCount) {
    Rng rng(15);
    for (std::size_t C : {4u, 8u, 10u}) {
        const nn::TsmConfig cfg{0.25, C};
        std::vector<double> d(5 * C);
        for (auto& v : d) v = rng.uniform(1.0, 2.0);
        const auto y = nn::temporal_shift(T64({5, C}, d), cfg);
        EXPECT_EQ(y.shape(), (Shape{5, C}));
        EXPECT_EQ(std::count(y.data().begin(), y.data().end(), 0.0),
                  static_cast<std::ptrdiff_t>(2 * cfg.shift_channels()));
    }
}

TEST(TemporalShift, ConfigErrors) {
    EXPECT_THROW((nn::TsmConfig{0.6, 8}.validate()), ContractError);
    EXPECT_THROW((nn::TsmConfig{0.1, 4}.validate()), ContractError);
    EXPECT_THROW(nn::temporal_shift(T64::zeros({2, 6}), nn::TsmConfig{0.25, 8}), DimensionError);
}

TEST(TransformerBlock, IdentityAtInit) {
    Rng rng(16);
    nn::TransformerEncoderBlock<double> te({32, 4, false}, rng);
    auto x = rand_t({8, 32}, rng);
    const auto y = te(x);
    EXPECT_EQ(y.shape(), (Shape{8, 32}));
    EXPECT_EQ(y.data(), x.data());
}

TEST(TransformerBlock, GradientOracle) {
    Rng rng(17);
    nn::TransformerEncoderBlock<double> te({8, 2, false}, rng);
    ParamList<double> p;
    te.collect("te", p);
    randomize(p, rng);
    auto x = rand_t({3, 8}, rng, true), r = rand_t({3, 8}, rng);
    auto wrt = tensors_of(p);
    wrt.push_back(x);
    const auto rep = check_gradients<double>("te", [&] { return sum(mul(te(x), r)); }, wrt, 1e-5);
    EXPECT_LT(rep.max_relative_error, 1e-4);
}

TEST(TransformerBlock, WidthMismatch) {
    Rng rng(18);
    nn::TransformerEncoderBlock<double> te({8, 2, false}, rng);
    EXPECT_THROW(te(rand_t({3, 4}, rng)), DimensionError);
}

TEST(MlpHead, ZeroWeightsGiveZeroLogits) {
    const auto head = nn::MlpHead<double>::zeros(4, 8, 3);
    const auto logits = head(T64({4}, {1, 2, 3, 4}));
    for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(MlpHead, OutputWidthAndArgmaxShift) {
    Rng rng(19);
    nn::MlpHead<double> head(4, 16, 52, rng);
    const auto logits = head(rand_t({4}, rng));
    EXPECT_EQ(logits.size(), 52u);
    EXPECT_EQ(argmax(logits), argmax(add_scalar(logits, 123.0)));
    EXPECT_THROW(head(rand_t({5}, rng)), DimensionError);
}

TEST(Argmax, TiesGoToLowestIndex) {
    EXPECT_EQ(argmax(T64({4}, {1, 3, 3, 2})), 1u);
}
