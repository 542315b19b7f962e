#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metasel/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace metasel;
using metasel::testing::max_relative_error;
using metasel::testing::numeric_gradient;
using metasel::testing::random_tensor;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1.5, -2, 3, 4.25});
    auto r = matmul(eye, a);
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()),
              std::vector<double>(a.data().begin(), a.data().end()));
}

TEST(Matmul, HandArithmetic) {
    auto r = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
    ASSERT_EQ(r.shape(), (Shape{2, 1}));
    EXPECT_EQ(r[0], 3.0);
    EXPECT_EQ(r[1], 7.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
}

TEST(Matmul, GradientOfSumIsRowBroadcastOfColumnSums) {
    std::mt19937_64 rng(7);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 5}, rng, false);
    Tape tape;
    tape.backward(sum(matmul(a, b, &tape), &tape));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 4; ++p) {
            double rowsum = 0.0;
            for (std::size_t j = 0; j < 5; ++j) rowsum += b[p * 5 + j];
            EXPECT_NEAR(a.grad()[i * 4 + p], rowsum, 1e-12);
        }
    auto numeric = numeric_gradient(a, [&] { return sum(matmul(a, b)).item(); });
    EXPECT_LT(max_relative_error(a.grad(), numeric), 1e-5);
}

TEST(Conv, IdentityKernel1d) {
    auto r = conv(Tensor::vector({1, 2, 3}), Tensor::vector({1}), 1);
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3}));
}

TEST(Conv, DifferenceKernel1d) {
    auto r = conv(Tensor::vector({1, 2, 3, 4}), Tensor::vector({1, -1}), 1);
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{-1, -1, -1}));
}

TEST(Conv, KernelLargerThanInputThrows) {
    EXPECT_THROW(conv(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3}), 1), DimensionError);
    EXPECT_THROW(conv(Tensor::zeros({2, 2}), Tensor::zeros({3, 1}), 2), DimensionError);
}

TEST(Conv, Gradient2dMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    auto x = random_tensor({5, 5}, rng);
    auto k = random_tensor({3, 3}, rng);
    auto w = random_tensor({3, 3}, rng, false);  // weights the outputs so the loss is not a plain sum
    auto loss = [&](Tape* t) { return sum(mul(conv(x, k, 2, t), w, t), t); };
    Tape tape;
    tape.backward(loss(&tape));
    auto nx = numeric_gradient(x, [&] { return loss(nullptr).item(); });
    auto nk = numeric_gradient(k, [&] { return loss(nullptr).item(); });
    EXPECT_LT(max_relative_error(x.grad(), nx), 1e-5);
    EXPECT_LT(max_relative_error(k.grad(), nk), 1e-5);
}

TEST(Conv, MultiChannelShapes) {
    auto r2 = conv(Tensor::zeros({2, 6, 5}), Tensor::zeros({4, 2, 3, 2}), 2);
    EXPECT_EQ(r2.shape(), (Shape{4, 4, 4}));
    auto r1 = conv(Tensor::zeros({3, 4}), Tensor::zeros({8, 3, 3}), 1);
    EXPECT_EQ(r1.shape(), (Shape{8, 2}));
    EXPECT_THROW(conv(Tensor::zeros({3, 4}), Tensor::zeros({8, 2, 3}), 1), DimensionError);
}

TEST(SoftmaxCrossEntropy, EqualLogitsGiveLogC) {
    auto loss = softmax_cross_entropy(Tensor::vector({0.3, 0.3, 0.3, 0.3}), 2);
    EXPECT_NEAR(loss.item(), std::log(4.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, GradientIsProbabilitiesMinusOneHot) {
    auto logits = Tensor::vector({0.0, 0.0}, true);
    Tape tape;
    tape.backward(softmax_cross_entropy(logits, 0, &tape));
    EXPECT_DOUBLE_EQ(logits.grad()[0], -0.5);
    EXPECT_DOUBLE_EQ(logits.grad()[1], 0.5);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRangeThrows) {
    EXPECT_THROW(softmax_cross_entropy(Tensor::vector({1, 2}), 2), IndexError);
}

TEST(SoftmaxCrossEntropy, RandomLogitsMatchFiniteDifferences) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = random_tensor({6}, rng, true, -5, 5);
        const std::size_t target = static_cast<std::size_t>(trial % 6);
        Tape tape;
        tape.backward(softmax_cross_entropy(logits, target, &tape));
        auto numeric = numeric_gradient(logits, [&] { return softmax_cross_entropy(logits, target).item(); });
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(logits.grad()[i], numeric[i], 1e-6);
    }
}

TEST(Softmax, NonnegativeAndNormalizedForExtremeLogits) {
    for (auto v : {std::vector<double>{1000, -1000, 0}, std::vector<double>{-700, -701, -702},
                   std::vector<double>{1e-300, 0, 5}}) {
        auto p = softmax(v);
        double s = 0;
        for (double x : p) {
            EXPECT_GE(x, 0.0);
            s += x;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Backward, PowerRule) {
    auto x = Tensor::scalar(3.0, true);
    Tape tape;
    tape.backward(mul(x, x, &tape));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    EXPECT_TRUE(tape.empty());
}

TEST(Backward, Identity) {
    auto x = Tensor::scalar(-2.0, true);
    Tape tape;
    auto y = scale(x, 1.0, &tape);
    tape.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Backward, NonScalarLossThrows) {
    auto x = Tensor::vector({1, 2}, true);
    Tape tape;
    auto y = relu(x, &tape);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Backward, LossNotOnTapeThrows) {
    Tape tape;
    EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), StateError);
}

TEST(Backward, ReluMatmulChainMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    auto x = random_tensor({4}, rng);
    auto w1 = random_tensor({4, 6}, rng);
    auto b1 = random_tensor({6}, rng);
    auto w2 = random_tensor({6, 3}, rng);
    auto f = [&](Tape* t) {
        auto h = relu(add_row_bias(matmul(x, w1, t), b1, t), t);
        return softmax_cross_entropy(matmul(h, w2, t), 1, t);
    };
    Tape tape;
    tape.backward(f(&tape));
    for (auto* p : {&x, &w1, &b1, &w2}) {
        auto numeric = numeric_gradient(*p, [&] { return f(nullptr).item(); });
        EXPECT_LT(max_relative_error(p->grad(), numeric), 1e-5);
    }
}

TEST(Backward, UntapedForwardIsBitwiseDeterministic) {
    std::mt19937_64 rng(9);
    auto x = random_tensor({1, 7, 7}, rng, false);
    auto k = random_tensor({3, 1, 3, 3}, rng, false);
    auto a = conv(x, k, 2);
    auto b = conv(x, k, 2);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(SigmoidBce, MatchesDirectFormulaAndGradient) {
    for (double z : {-30.0, -2.0, 0.0, 0.7, 40.0}) {
        for (double y : {0.0, 1.0}) {
            auto logit = Tensor::scalar(z, true);
            Tape tape;
            auto loss = sigmoid_bce(logit, y, 2.0, &tape);
            const double p = sigmoid(z);
            if (std::abs(z) < 20) {
                EXPECT_NEAR(loss.item(), -2.0 * (y * std::log(p) + (1 - y) * std::log(1 - p)), 1e-12);
            }
            tape.backward(loss);
            EXPECT_NEAR(logit.grad()[0], 2.0 * (p - y), 1e-12);
        }
    }
}

TEST(Sgd, ZeroLearningRateLeavesParamsUnchanged) {
    auto p = Tensor::vector({1.0, -2.0}, true);
    p.mutable_grad()[0] = 5.0;
    p.mutable_grad()[1] = -3.0;
    sgd_step({p}, 0.0, 0.9);
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], -2.0);
    EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Sgd, PlainStepSubtractsGradient) {
    auto p = Tensor::vector({1.0, -2.0}, true);
    p.mutable_grad()[0] = 0.25;
    p.mutable_grad()[1] = -0.5;
    sgd_step({p}, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(p[0], 0.75);
    EXPECT_DOUBLE_EQ(p[1], -1.5);
}

TEST(Sgd, MomentumTwoStepRecurrence) {
    const double lr = 0.1, g = 0.5;
    auto p = Tensor::scalar(0.0, true);
    Sgd opt({p}, lr, 0.9);
    for (int i = 0; i < 2; ++i) {
        p.mutable_grad()[0] = g;
        opt.step();
    }
    EXPECT_NEAR(p[0], -lr * g * (1.0 + 1.9), 1e-15);
}

TEST(Sgd, MissingGradientThrows) {
    auto p = Tensor::scalar(1.0, true);
    EXPECT_THROW(sgd_step({p}, 0.1), StateError);
}
