#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <msplab/model.hpp>
#include <msplab/rng.hpp>
#include <msplab/tensor.hpp>

#include "support/oracles.hpp"

using namespace msplab;
using msplab::testing::central_difference;
using msplab::testing::relative_error;

namespace {

std::vector<double> random_values(RandomStream& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

void expect_values(std::span<const double> got, const std::vector<double>& want, double tol = 0.0) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor m({2, 2}, {3, 4, 5, 6});
    expect_values(matmul(eye, m).data(), {3, 4, 5, 6});

    const Tensor row({1, 2}, {1, 2});
    const Tensor zeros({2, 1}, {0, 0});
    const Tensor out = matmul(row, zeros);
    EXPECT_EQ(out.shape(), (Shape{1, 1}));
    EXPECT_EQ(out.item(), 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("by [2x3]"), std::string::npos);
    }
}

TEST(Matmul, GradientOfSumMatchesColumnSumsAndFiniteDifferences) {
    RandomStream rng(11, "matmul");
    const auto av = random_values(rng, 12);
    const auto bv = random_values(rng, 8);
    Tensor a({3, 4}, av, true);
    Tensor b({4, 2}, bv, true);
    backward(sum(matmul(a, b)));
    const auto ga = a.grad();

    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(ga[i * 4 + p], bv[p * 2] + bv[p * 2 + 1], 1e-12);

    auto f = [&](const std::vector<double>& x) {
        NoGradGuard ng;
        return sum(matmul(Tensor({3, 4}, x), Tensor({4, 2}, bv))).item();
    };
    for (std::size_t i = 0; i < av.size(); ++i) EXPECT_LT(relative_error(ga[i], central_difference(f, av, i)), 1e-6);

    auto fb = [&](const std::vector<double>& x) {
        NoGradGuard ng;
        return sum(matmul(Tensor({3, 4}, av), Tensor({4, 2}, x))).item();
    };
    const auto gb = b.grad();
    for (std::size_t i = 0; i < bv.size(); ++i) EXPECT_LT(relative_error(gb[i], central_difference(fb, bv, i)), 1e-6);
}

TEST(Relu, ForwardAndZeroSubgradient) {
    Tensor x({3}, {-1, 0, 2}, true);
    const Tensor y = relu(x);
    expect_values(y.data(), {0, 0, 2});
    backward(sum(y));
    expect_values(x.grad(), {0, 0, 1});
}

TEST(Relu, AllNegativeGivesZeroOutputAndGradient) {
    Tensor x({4}, {-3, -2, -0.5, -1e-9}, true);
    const Tensor y = relu(x);
    expect_values(y.data(), {0, 0, 0, 0});
    backward(sum(y));
    expect_values(x.grad(), {0, 0, 0, 0});
}

TEST(Relu, GradientMaskMatchesFiniteDifferences) {
    RandomStream rng(5, "relu");
    auto xv = random_values(rng, 50);
    for (auto& v : xv)
        if (std::abs(v) < 1e-3) v = 0.5;  // stay away from the kink
    Tensor x({50}, xv, true);
    backward(sum(relu(x)));
    const auto g = x.grad();
    auto f = [](const std::vector<double>& v) {
        NoGradGuard ng;
        return sum(relu(Tensor({v.size()}, v))).item();
    };
    for (std::size_t i = 0; i < xv.size(); ++i) {
        EXPECT_EQ(g[i], xv[i] > 0 ? 1.0 : 0.0);
        EXPECT_NEAR(central_difference(f, xv, i), g[i], 1e-8);
    }
}

TEST(Conv2d, IdentityAndZeroKernels) {
    RandomStream rng(3, "conv");
    const auto xv = random_values(rng, 25);
    const Tensor x({1, 5, 5}, xv);
    std::vector<double> k(9, 0.0);
    k[4] = 1.0;
    expect_values(conv2d(x, Tensor({1, 1, 3, 3}, k)).data(), xv);
    const Tensor zero = conv2d(x, Tensor::zeros({1, 1, 3, 3}));
    expect_values(zero.data(), std::vector<double>(25, 0.0));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
    EXPECT_THROW(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 3, 3, 3})), DimensionError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 5, 5})), DimensionError);
}

TEST(Conv2d, MatchesNestedLoopOracleAndFiniteDifferences) {
    RandomStream rng(21, "conv");
    const auto xv = random_values(rng, 16);
    const auto kv = random_values(rng, 18);
    Tensor x({1, 4, 4}, xv, true);
    Tensor k({2, 1, 3, 3}, kv, true);
    const Tensor y = conv2d(x, k);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 4}));
    expect_values(y.data(), msplab::testing::nested_loop_conv(xv, 1, 4, 4, kv, 2), 1e-12);

    // weight the outputs so every position matters differently
    const auto wv = random_values(rng, 32);
    const Tensor weights({1, 32}, wv);
    auto loss_of = [&](const Tensor& out) { return matmul(weights, reshape(out, {32, 1})); };
    backward(loss_of(y));
    const auto gx = x.grad();
    const auto gk = k.grad();

    auto fx = [&](const std::vector<double>& v) {
        NoGradGuard ng;
        return loss_of(conv2d(Tensor({1, 4, 4}, v), Tensor({2, 1, 3, 3}, kv))).item();
    };
    auto fk = [&](const std::vector<double>& v) {
        NoGradGuard ng;
        return loss_of(conv2d(Tensor({1, 4, 4}, xv), Tensor({2, 1, 3, 3}, v))).item();
    };
    for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_LT(relative_error(gx[i], central_difference(fx, xv, i)), 1e-4);
    for (std::size_t i = 0; i < kv.size(); ++i) EXPECT_LT(relative_error(gk[i], central_difference(fk, kv, i)), 1e-4);
}

TEST(Conv2d, BatchedEqualsPerExample) {
    RandomStream rng(8, "conv");
    const auto xv = random_values(rng, 2 * 2 * 3 * 3);
    const auto kv = random_values(rng, 3 * 2 * 9);
    const Tensor k({3, 2, 3, 3}, kv);
    const Tensor batched = conv2d(Tensor({2, 2, 3, 3}, xv), k);
    for (std::size_t n = 0; n < 2; ++n) {
        std::vector<double> one(xv.begin() + static_cast<long>(n * 18), xv.begin() + static_cast<long>((n + 1) * 18));
        const Tensor single = conv2d(Tensor({2, 3, 3}, one), k);
        for (std::size_t i = 0; i < single.numel(); ++i) EXPECT_EQ(single[i], batched[n * 27 + i]);
    }
}

TEST(MeanPool, AveragesWindowsAndSpreadsGradient) {
    Tensor x({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    const Tensor y = mean_pool2d(x, 2);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2}));
    expect_values(y.data(), {3.5, 5.5});
    backward(sum(y));
    expect_values(x.grad(), std::vector<double>(8, 0.25));
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
    const auto r = softmax_cross_entropy(Tensor({4}, {0, 0, 0, 0}), 2);
    expect_values(r.probs, {0.25, 0.25, 0.25, 0.25}, 1e-15);
    EXPECT_NEAR(r.loss.item(), std::log(4.0), 1e-12);
    EXPECT_NEAR(r.loss.item(), 1.386294, 1e-6);
}

TEST(SoftmaxCrossEntropy, ExtremeLogitsDoNotOverflow) {
    const auto r = softmax_cross_entropy(Tensor({2}, {1000, 0}), 0);
    EXPECT_TRUE(std::isfinite(r.loss.item()));
    EXPECT_NEAR(r.probs[0], 1.0, 1e-15);
    EXPECT_NEAR(r.probs[1], 0.0, 1e-15);
    EXPECT_NEAR(r.loss.item(), 0.0, 1e-15);
    const auto wrong = softmax_cross_entropy(Tensor({2}, {1000, 0}), 1);
    EXPECT_NEAR(wrong.loss.item(), 1000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRangeIsIndexError) {
    EXPECT_THROW(softmax_cross_entropy(Tensor({3}, {0, 0, 0}), 3), IndexError);
}

TEST(SoftmaxCrossEntropy, GradientIsProbsMinusOneHot) {
    RandomStream rng(17, "ce");
    const auto lv = random_values(rng, 10, 2.0);
    Tensor logits({10}, lv, true);
    const auto r = softmax_cross_entropy(logits, 7);
    backward(r.loss);
    const auto g = logits.grad();
    auto f = [](const std::vector<double>& v) {
        NoGradGuard ng;
        return softmax_cross_entropy(Tensor({10}, v), 7).loss.item();
    };
    for (std::size_t c = 0; c < 10; ++c) {
        EXPECT_NEAR(g[c], r.probs[c] - (c == 7 ? 1.0 : 0.0), 1e-15);
        EXPECT_LT(relative_error(g[c], central_difference(f, lv, c)), 1e-4);
    }
}

TEST(SoftmaxCrossEntropy, ProbabilitiesFormASimplexForFiniteLogits) {
    RandomStream rng(99, "simplex");
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t classes = 2 + rng.below(20);
        const double scale = std::pow(10.0, static_cast<double>(rng.below(7)) - 2.0);  // 1e-2 .. 1e4
        const auto lv = random_values(rng, classes, scale);
        const auto r = softmax_cross_entropy(Tensor({classes}, lv), rng.below(classes));
        double total = 0.0;
        for (double p : r.probs) {
            EXPECT_GE(p, 0.0);
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Backward, SumOfWeights) {
    Tensor w({3}, {0.3, -2, 5}, true);
    backward(sum(w));
    expect_values(w.grad(), {1, 1, 1});
}

TEST(Backward, IndependentLossLeavesZeroGradient) {
    Tensor w({3}, {1, 2, 3}, true);
    Tensor v({2}, {4, 5}, true);
    backward(sum(v));
    expect_values(w.grad(), {0, 0, 0});
    EXPECT_FALSE(w.has_grad());
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
    Tensor w({2}, {1, 2}, true);
    const Tensor loss = sum(relu(w));
    backward(loss);
    backward(loss);
    expect_values(w.grad(), {2, 2});
    w.zero_grad();
    backward(loss);
    expect_values(w.grad(), {1, 1});
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor w({2}, {1, 2}, true);
    EXPECT_THROW(backward(relu(w)), ContractError);
}

TEST(Backward, SharedSubexpressionCountsBothPaths) {
    Tensor w({2}, {1, 2}, true);
    const Tensor h = relu(w);
    backward(sum(add(h, h)));
    expect_values(w.grad(), {2, 2});
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor w({2}, {1, 2}, true);
    Tensor y;
    {
        NoGradGuard ng;
        y = sum(w);
    }
    EXPECT_FALSE(y.requires_grad());
    backward(y);
    EXPECT_FALSE(w.has_grad());
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
    ModelSpec spec{MlpArch{{7, 5}}, {6}, 3, 42};
    Model model(spec);
    RandomStream rng(4, "mlp");
    // zero biases put whole rows exactly on a relu kink; move off it
    for (auto& p : model.parameters())
        for (auto& v : p.value.mutable_data()) v += 0.1 * rng.normal();
    const Tensor batch({4, 6}, random_values(rng, 24));
    const std::vector<std::size_t> labels{0, 2, 1, 2};

    model.zero_grad();
    backward(softmax_cross_entropy(model.forward(batch), labels).loss);

    std::size_t checked = 0;
    for (auto& p : model.parameters()) {
        const auto g = p.value.grad();
        for (std::size_t i = 0; i < g.size() && checked < 100; ++i, ++checked) {
            auto data = p.value.mutable_data();
            const double orig = data[i];
            auto f = [&](double v) {
                data[i] = v;
                NoGradGuard ng;
                return softmax_cross_entropy(model.forward(batch), labels).loss.item();
            };
            const double fd = (f(orig + 1e-5) - f(orig - 1e-5)) / 2e-5;
            data[i] = orig;
            EXPECT_LT(relative_error(g[i], fd), 1e-4) << p.name << "[" << i << "]";
        }
    }
    EXPECT_EQ(checked, 100u);
}

TEST(Forward, IsBitDeterministic) {
    ModelSpec spec{SmallCnnArch{3, 6}, {1, 6, 6}, 4, 9};
    Model a(spec), b(spec);
    RandomStream rng(1, "det");
    const Tensor x({2, 1, 6, 6}, random_values(rng, 72));
    const auto ya = a.forward(x);
    const auto yb = b.forward(x);
    for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(Model, ParameterNamesAreUniqueAndOutputWidthMatchesClasses) {
    Model m(ModelSpec{MlpArch{{4, 4}}, {3}, 5, 0});
    std::set<std::string> names;
    for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second);
    EXPECT_EQ(m.forward(Tensor::zeros({2, 3})).shape(), (Shape{2, 5}));
    Model cnn(ModelSpec{SmallCnnArch{2, 3}, {1, 4, 4}, 7, 0});
    EXPECT_EQ(cnn.forward(Tensor::zeros({3, 1, 4, 4})).shape(), (Shape{3, 7}));
}

TEST(Tensor, ShapeDataInvariant) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor({0}, {}), DimensionError);
    Tensor t({2, 3}, std::vector<double>(6, 1.0), true);
    backward(sum(t));
    EXPECT_EQ(t.grad().size(), 6u);
}
