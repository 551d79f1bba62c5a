#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numbers>

#include "bmoe/checkpoint.hpp"
#include "bmoe/gradcheck.hpp"
#include "bmoe/ops.hpp"
#include "bmoe/optim.hpp"

using namespace bmoe;
using T64 = Tensor<double>;

namespace {

T64 rand_t(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return T64(std::move(shape), std::move(d), grad);
}

// Naive triple loop, kept separate from the blocked kernel in ops.hpp.
std::vector<double> reference_matmul(const T64& a, const T64& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a.data()[i * k + p] * b.data()[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

// Max relative error of backward() against central differences for a
// scalar function of `inputs`.
double grad_error(const std::function<T64()>& f, const std::vector<T64>& inputs, double eps = 1e-5) {
    return check_gradients<double>("op", f, inputs, eps).max_relative_error;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
    T64 a({2, 2}, {1, 2, 3, 4});
    T64 eye({2, 2}, {1, 0, 0, 1});
    EXPECT_EQ(matmul(a, eye).data(), a.data());
    T64 z = T64::zeros({3, 2});
    const auto zc = matmul(z, a);
    for (double v : zc.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ColumnExample) {
    T64 a({2, 2}, {1, 2, 3, 4});
    T64 b({2, 1}, {5, 6});
    const auto c = matmul(a, b);
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_EQ(c.data(), reference_matmul(a, b));
    EXPECT_EQ(c.data(), (std::vector<double>{17, 39}));
}

TEST(Matmul, MatchesReferenceOnRandomShapes) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = static_cast<std::size_t>(rng.integer(1, 9));
        const auto k = static_cast<std::size_t>(rng.integer(1, 9));
        const auto n = static_cast<std::size_t>(rng.integer(1, 9));
        auto a = rand_t({m, k}, rng, false), b = rand_t({k, n}, rng, false);
        const auto ref = reference_matmul(a, b);
        const auto got = matmul(a, b).data();
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
    }
}

TEST(Matmul, MismatchNamesBothShapes) {
    T64 a = T64::zeros({2, 3}), b = T64::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, BackwardRule) {
    Rng rng(3);
    auto a = rand_t({3, 4}, rng), b = rand_t({4, 2}, rng);
    backward(sum(matmul(a, b)));
    // d/dA sum(AB) = 1 * B^T: row sums of B.
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(a.grad()[i * 4 + p], b.data()[p * 2] + b.data()[p * 2 + 1], 1e-12);
    for (std::size_t p = 0; p < 4; ++p) {
        double col = 0.0;
        for (std::size_t i = 0; i < 3; ++i) col += a.data()[i * 4 + p];
        EXPECT_NEAR(b.grad()[p * 2], col, 1e-12);
    }
}

TEST(Tensor, RejectsLengthMismatchAndZeroExtent) {
    EXPECT_THROW(T64({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(T64({0, 2}, {}), DimensionError);
}

TEST(Softmax, Examples) {
    auto s = softmax(T64({2}, {0, 0}), 0);
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
    s = softmax(T64({2}, {std::log(2.0), 0}), 0);
    EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
    s = softmax(T64({2}, {1000, 1000}), 0);
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, RowsAreDistributionsAndShiftInvariant) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto rows = static_cast<std::size_t>(rng.integer(1, 5));
        const auto n = static_cast<std::size_t>(rng.integer(1, 7));
        auto x = rand_t({rows, n}, rng, false, -20, 20);
        const double c = rng.uniform(-50, 50);
        const auto p = softmax(x, 1);
        const auto q = softmax(add_scalar(x, c), 1);
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                EXPECT_GE(p.at(r, j), 0.0);
                EXPECT_NEAR(p.at(r, j), q.at(r, j), 1e-12);
                total += p.at(r, j);
            }
            EXPECT_NEAR(total, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, Axis0SumsColumns) {
    const auto p = softmax(T64({2, 3}, {1, 2, 3, 4, 5, 6}), 0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p.at(0, j) + p.at(1, j), 1.0, 1e-15);
    EXPECT_THROW(softmax(T64({2}, {1, 2}), 1), DimensionError);
}

TEST(Backward, SquareSum) {
    T64 x({3}, {1, 2, 3}, true);
    backward(sum(square(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ConstantLossLeavesZeroGrads) {
    T64 x({2}, {1, 2}, true);
    x.zero_grad();
    backward(T64::scalar(3.0));
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, AccumulatesUntilReset) {
    T64 x({2}, {1, 2}, true);
    backward(sum(square(x)));
    backward(sum(square(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{4, 8}));
    x.zero_grad();
    backward(sum(x));
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 1}));
}

TEST(Backward, NonScalarLossThrows) {
    T64 x({2}, {1, 2}, true);
    EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, SumOfProductMatchesFiniteDifferences) {
    Rng rng(21);
    auto a = rand_t({3, 4}, rng), b = rand_t({4, 5}, rng);
    EXPECT_LT(grad_error([&] { return sum(matmul(a, b)); }, {a, b}), 1e-6);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    T64 x({2}, {1, 2}, true);
    T64 y;
    {
        NoGradGuard guard;
        y = mul(x, x);
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(grad_enabled());
}

TEST(Tape, ParentsPrecedeChildren) {
    Rng rng(2);
    auto a = rand_t({2, 3}, rng), b = rand_t({3, 3}, rng), w = rand_t({3}, rng);
    const auto loss = sum(gelu(add(matmul(a, b), w)));
    const auto tape = Tape<double>::record_from(loss);
    std::map<const Node<double>*, std::size_t> pos;
    for (std::size_t i = 0; i < tape.order().size(); ++i) pos[tape.order()[i]] = i;
    for (const Node<double>* n : tape.order())
        for (const auto& p : n->parents)
            if (p->requires_grad) {
                EXPECT_LT(pos.at(p.get()), pos.at(n));
            }
    EXPECT_EQ(leaf_parameters(loss).size(), 3u);
}

TEST(FiniteDifference, Examples) {
    T64 x({2}, {1, 2});
    const auto g = finite_difference_gradient<double>([&] { return sum(square(x)).item(); }, {x});
    EXPECT_NEAR(g[0][0], 2.0, 1e-8);
    EXPECT_NEAR(g[0][1], 4.0, 1e-8);
    const auto z = finite_difference_gradient<double>([] { return 7.0; }, {x});
    EXPECT_EQ(z[0], (std::vector<double>{0.0, 0.0}));
    EXPECT_THROW(finite_difference_gradient<double>([] { return std::numeric_limits<double>::infinity(); }, {x}),
                 ContractError);
}

// Every differentiable op against central differences, eps = 1e-5, over 20 seeds.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
    Rng rng(static_cast<std::uint64_t>(GetParam()));
    auto a = rand_t({3, 4}, rng), b = rand_t({4, 2}, rng), r2 = rand_t({3, 2}, rng, false);
    auto w = rand_t({4, 5}, rng), bias = rand_t({5}, rng), r5 = rand_t({3, 5}, rng, false);
    auto x = rand_t({3, 4}, rng), r4 = rand_t({3, 4}, rng, false), v4 = rand_t({4}, rng);
    auto gam = rand_t({4}, rng), bet = rand_t({4}, rng);
    const double tol = 1e-4;
    auto probe = [](const T64& out, const T64& r) { return sum(mul(out, r)); };

    EXPECT_LT(grad_error([&] { return probe(matmul(a, b), r2); }, {a, b}), tol);
    EXPECT_LT(grad_error([&] { return probe(linear(x, w, bias), r5); }, {x, w, bias}), tol);
    EXPECT_LT(grad_error([&] { return probe(transpose(transpose(x)), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(add(x, v4), r4); }, {x, v4}), tol);
    EXPECT_LT(grad_error([&] { return probe(sub(x, a), r4); }, {x, a}), tol);
    EXPECT_LT(grad_error([&] { return probe(mul(x, v4), r4); }, {x, v4}), tol);
    EXPECT_LT(grad_error([&] { return probe(sigmoid(x), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(tanh(x), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(gelu(x), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(softmax(x, 1), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(softmax(x, 0), r4); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(layer_norm(x, gam, bet), r4); }, {x, gam, bet}), tol);
    EXPECT_LT(grad_error([&] { return sum(mul(mean_rows(x), v4)); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return mean(square(x)); }, {x}), tol);
    EXPECT_LT(grad_error([&] { return probe(reshape(concat_rows<double>({x, a}), {6, 4}), concat_rows<double>({r4, r4})); },
                         {x, a}),
              tol);
    EXPECT_LT(grad_error([&] { return cross_entropy(v4, 2); }, {v4}), tol);
    EXPECT_LT(grad_error([&] { return squared_distance(v4, gam); }, {v4, gam}), tol);

    auto q = rand_t({3, 4}, rng), k = rand_t({5, 4}, rng), v = rand_t({5, 4}, rng);
    EXPECT_LT(grad_error([&] { return probe(attention(q, k, v, 2).output, r4); }, {q, k, v}), tol);
    auto q1 = rand_t({4}, rng);
    EXPECT_LT(grad_error([&] { return sum(mul(pooled_attention(q1, k, v).output, v4)); }, {q1, k, v}), tol);

    auto seq = rand_t({5, 3}, rng), dk = rand_t({3, 3}, rng), db = rand_t({3}, rng), r53 = rand_t({5, 3}, rng, false);
    EXPECT_LT(grad_error([&] { return probe(depthwise_conv1d(seq, dk, db), r53); }, {seq, dk, db}), tol);

    auto frames = rand_t({2, 4, 4, 2}, rng), ck = rand_t({3, 3, 2, 3}, rng), cb = rand_t({3}, rng);
    auto r_conv = rand_t({2, 4, 4, 3}, rng, false), r_pool = rand_t({2, 2, 2, 2}, rng, false);
    auto r_shift = rand_t({2, 4, 4, 2}, rng, false);
    EXPECT_LT(grad_error([&] { return probe(conv2d(frames, ck, cb), r_conv); }, {frames, ck, cb}), tol);
    EXPECT_LT(grad_error([&] { return probe(avg_pool2(frames), r_pool); }, {frames}), tol);
    EXPECT_LT(grad_error([&] { return probe(temporal_shift(frames, 1), r_shift); }, {frames}), tol);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(1, 21));

TEST(Sgd, PlainStep) {
    ParamList<double> p{{"w", T64({1}, {1.0}, true)}};
    p[0].tensor.mutable_grad() = {1.0};
    SgdState<double> st;
    st.learning_rate = 0.1, st.momentum = 0.0, st.weight_decay = 0.0;
    sgd_step(p, st, 0);
    EXPECT_NEAR(p[0].tensor[0], 0.9, 1e-15);
}

TEST(Sgd, DecayOnlyStep) {
    ParamList<double> p{{"w", T64({1}, {1.0}, true)}};
    p[0].tensor.mutable_grad() = {0.0};
    SgdState<double> st;
    st.learning_rate = 1.0, st.momentum = 0.0, st.weight_decay = 1e-4;
    sgd_step(p, st, 0);
    EXPECT_NEAR(p[0].tensor[0], 0.9999, 1e-15);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
    ParamList<double> p{{"w", T64({2}, {0.0, 0.0}, true)}};
    SgdState<double> st;
    st.learning_rate = 1.0, st.momentum = 0.5, st.weight_decay = 0.0;
    for (int i = 0; i < 2; ++i) {
        p[0].tensor.mutable_grad() = {1.0, -2.0};
        sgd_step(p, st, 0);
    }
    // v1 = g, v2 = 1.5 g; w = -(v1 + v2) = -2.5 g.
    EXPECT_NEAR(p[0].tensor[0], -2.5, 1e-15);
    EXPECT_NEAR(p[0].tensor[1], 5.0, 1e-15);
    EXPECT_EQ(st.velocity["w"].size(), p[0].tensor.size());
}

TEST(Sgd, ScheduleDecaysAtMilestones) {
    SgdState<double> st;
    EXPECT_DOUBLE_EQ(st.lr_at(0), 0.00125);
    EXPECT_NEAR(st.lr_at(29), 0.00125, 1e-18);
    EXPECT_NEAR(st.lr_at(30), 0.000125, 1e-18);
    EXPECT_NEAR(st.lr_at(60), 0.0000125, 1e-18);
    double prev = st.lr_at(0);
    for (std::size_t e = 1; e < 200; ++e) {
        EXPECT_LE(st.lr_at(e), prev);
        prev = st.lr_at(e);
    }
}

TEST(Sgd, MissingGradientIsAContractError) {
    ParamList<double> p{{"w", T64({1}, {1.0}, true)}};
    SgdState<double> st;
    EXPECT_THROW(sgd_step(p, st, 0), ContractError);
}

TEST(Sgd, RejectsBadHyperparameters) {
    SgdState<double> st;
    st.momentum = 1.0;
    EXPECT_THROW(st.validate(), ContractError);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
    ParamList<double> p{{"a", T64({2}, {0, 0}, true)}, {"b", T64({1}, {0}, true)}};
    p[0].tensor.mutable_grad() = {3.0, 0.0};
    p[1].tensor.mutable_grad() = {4.0};
    EXPECT_DOUBLE_EQ(clip_grad_norm(p, 10.0), 5.0);
    EXPECT_EQ(p[1].tensor.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
    EXPECT_NEAR(p[0].tensor.grad()[0], 0.6, 1e-15);
    EXPECT_NEAR(p[1].tensor.grad()[0], 0.8, 1e-15);
    EXPECT_THROW(clip_grad_norm(p, 0.0), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Rng rng(9);
    ParamList<float> params;
    for (int i = 0; i < 4; ++i) {
        std::vector<float> d(6);
        for (auto& v : d) v = static_cast<float>(rng.normal());
        params.push_back({"layer" + std::to_string(i) + ".weight", Tensor<float>({2, 3}, d, true)});
    }
    params[0].tensor.mutable_data()[0] = -0.0f;
    params[1].tensor.mutable_data()[1] = std::numeric_limits<float>::denorm_min();
    const auto path = (std::filesystem::temp_directory_path() / "bmoe_test_ckpt.bmo").string();
    save_checkpoint(path, params);
    const auto entries = load_checkpoint(path);
    ParamList<float> copy;
    for (const auto& p : params) copy.push_back({p.name, Tensor<float>::zeros(p.tensor.shape(), true)});
    EXPECT_EQ(apply_checkpoint(copy, entries), params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_EQ(std::bit_cast<std::uint32_t>(copy[i].tensor[j]), std::bit_cast<std::uint32_t>(params[i].tensor[j]));
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
    ParamList<float> params{{"w", Tensor<float>({2}, {1, 2}, true)}};
    auto bytes = encode_checkpoint(to_entries(params));
    auto bad = bytes;
    bad[0] = 'X';
    io::ByteReader r1(bad);
    EXPECT_THROW(decode_checkpoint(r1), IoError);
    bytes.pop_back();
    io::ByteReader r2(bytes);
    EXPECT_THROW(decode_checkpoint(r2), IoError);
}

TEST(Checkpoint, ShapeMismatchNamesTensor) {
    ParamList<float> src{{"head.fc1.weight", Tensor<float>({2, 2}, {1, 2, 3, 4}, true)}};
    ParamList<float> dst{{"head.fc1.weight", Tensor<float>::zeros({3, 2}, true)}};
    try {
        apply_checkpoint(dst, to_entries(src));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("head.fc1.weight"), std::string::npos);
    }
    ParamList<float> other{{"other", Tensor<float>::zeros({1}, true)}};
    EXPECT_THROW(apply_checkpoint(other, to_entries(src)), IoError);
    EXPECT_EQ(apply_checkpoint(other, to_entries(src), false), 0u);
}
