#include <gtest/gtest.h>

#include "tritransnet/gradcheck.hpp"
#include "tritransnet/tensor.hpp"

using namespace ttn;
using D = Tensor<double>;

namespace {

D randt(Rng& rng, Shape s, double scale = 1.0) { return D::randn(rng, s, scale); }

// Runs grad_check over one builder with a single leaf set.
double check(const std::function<D()>& build, std::vector<D> leaves, GradCheckOptions opt = {}) {
    return grad_check(build, leaves, opt);
}

}  // namespace

TEST(Forward, Examples) {
    D x = D::from({3}, {-1, 0, 2});
    EXPECT_EQ(relu(x).vec(), (std::vector<double>{0, 0, 2}));
    EXPECT_DOUBLE_EQ(sigmoid(D::scalar(0)).item(), 0.5);
    D img = D::ones({1, 1, 3, 3});
    D ker = D::ones({1, 1, 3, 3});
    EXPECT_DOUBLE_EQ(conv2d(img, ker, D{}, 1, 0).item(), 9.0);
}

TEST(Forward, ShapeErrorsNameOp) {
    D a = D::ones({2, 3}), b = D::ones({4, 5});
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    }
    EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Backward, SumOnes) {
    D x = D::ones({2, 2}).set_requires_grad(true);
    sum_all(x).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, SquareRule) {
    D x = D::from({2}, {1, 2}).set_requires_grad(true);
    sum_all(mul(x, x)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, AccumulatesAcrossCalls) {
    D x = D::ones({2}).set_requires_grad(true);
    sum_all(x).backward();
    sum_all(x).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, NonScalarRejected) {
    D x = D::ones({2, 2}).set_requires_grad(true);
    EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(GradCheck, IdentitySumExactlyZero) {
    std::vector<D> leaves{D::ones({5})};
    GradCheckOptions opt;
    opt.h = 0.25;  // dyadic step: the linear probe is exact in floating point
    double err = check([&] { return sum_all(leaves[0]); }, leaves, opt);
    EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, SigmoidAffine) {
    Rng rng(2);
    std::vector<D> leaves{randt(rng, {4, 3}, 0.5), randt(rng, {3}, 0.5)};
    double err = check([&] { return sum_all(sigmoid(matmul(leaves[0], reshape(leaves[1], {3, 1})))); },
                       leaves);
    EXPECT_LT(err, 1e-4);
}

// Every primitive: analytic vs central differences at 64-bit, >=100 coordinates.
TEST(GradCheck, PerPrimitiveCatalog) {
    Rng rng(3);
    struct Case {
        const char* name;
        std::function<double()> run;
    };
    auto unary = [&](auto op, Shape s, double scale = 1.0) {
        std::vector<D> leaves{randt(rng, s, scale)};
        return check([&, op] { return sum_all(mul(op(leaves[0]), leaves[0])); }, leaves);
    };
    // elementwise (weighted by the input so gradients are non-trivial)
    EXPECT_LT(unary([](const D& x) { return relu(add_scalar(x, 0.3)); }, {4, 27}), 1e-4) << "relu";
    EXPECT_LT(unary([](const D& x) { return sigmoid(x); }, {4, 27}), 1e-4) << "sigmoid";
    EXPECT_LT(unary([](const D& x) { return gelu(x); }, {4, 27}), 1e-4) << "gelu";
    EXPECT_LT(unary([](const D& x) { return softplus(x); }, {4, 27}), 1e-4) << "softplus";
    EXPECT_LT(unary([](const D& x) { return abs_val(add_scalar(x, 0.3)); }, {4, 27}), 1e-4)
        << "abs";
    EXPECT_LT(unary([](const D& x) { return softmax_lastdim(x); }, {12, 9}), 1e-4) << "softmax";

    {  // add/sub/mul/div with broadcasting
        std::vector<D> leaves{randt(rng, {2, 3, 4}), randt(rng, {1, 3, 1}),
                              randt(rng, {2, 3, 4})};
        double err = check(
            [&] {
                D y = div(mul(add(leaves[0], leaves[1]), sub(leaves[2], leaves[1])),
                          add_scalar(sigmoid(leaves[0]), 1.0));
                return sum_all(y);
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "broadcast arithmetic";
    }
    {  // matmul both ranks
        std::vector<D> leaves{randt(rng, {5, 7}), randt(rng, {7, 6}), randt(rng, {3, 4, 5}),
                              randt(rng, {3, 5, 4})};
        double err = check(
            [&] {
                return add(sum_all(matmul(leaves[0], leaves[1])),
                           sum_all(mul(matmul(leaves[2], leaves[3]), D::full({3, 4, 4}, 0.5))));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "matmul";
    }
    {  // linear
        std::vector<D> leaves{randt(rng, {4, 6}), randt(rng, {6, 5}), randt(rng, {5})};
        double err =
            check([&] { return sum_all(sigmoid(linear(leaves[0], leaves[1], leaves[2]))); },
                  leaves);
        EXPECT_LT(err, 1e-4) << "linear";
    }
    {  // conv2d stride 2 pad 1 with bias
        std::vector<D> leaves{randt(rng, {2, 3, 6, 6}), randt(rng, {4, 3, 3, 3}), randt(rng, {4})};
        double err = check(
            [&] {
                return sum_all(mul(conv2d(leaves[0], leaves[1], leaves[2], 2, 1),
                                   D::full({2, 4, 3, 3}, 0.7)));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "conv2d";
    }
    {  // layer_norm
        std::vector<D> leaves{randt(rng, {6, 8}), randt(rng, {8}, 0.1), randt(rng, {8}, 0.1)};
        double err = check(
            [&] {
                return sum_all(mul(layer_norm(leaves[0], add_scalar(leaves[1], 1.0), leaves[2],
                                              1e-6),
                                   leaves[0]));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "layer_norm";
    }
    {  // resize_bilinear + upsample2x
        std::vector<D> leaves{randt(rng, {2, 3, 5, 5})};
        double err = check(
            [&] {
                return add(sum_all(mul(resize_bilinear(leaves[0], 8, 7),
                                       D::full({2, 3, 8, 7}, 0.3))),
                           sum_all(mul(upsample2x(leaves[0]), D::full({2, 3, 10, 10}, 0.2))));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "resize";
    }
    {  // pooling family
        std::vector<D> leaves{randt(rng, {2, 3, 8, 8})};
        double err = check(
            [&] {
                D a = sum_all(mul(max_pool2d(leaves[0], 2, 2), D::full({2, 3, 4, 4}, 0.5)));
                D b = sum_all(mul(avg_pool2d(leaves[0], 2, 2), D::full({2, 3, 4, 4}, 0.4)));
                D c = sum_all(mul(avg_pool_same(leaves[0], 3), leaves[0]));
                D d = sum_all(global_avg_pool(leaves[0]));
                D e = sum_all(global_max_pool(leaves[0]));
                return add(add(add(a, b), add(c, d)), e);
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "pooling";
    }
    {  // concat / permute / reshape / reductions
        std::vector<D> leaves{randt(rng, {2, 3, 4}), randt(rng, {2, 5, 4})};
        double err = check(
            [&] {
                D c = concat<double>({leaves[0], leaves[1]}, 1);
                D p = permute(c, {0, 2, 1});
                D r = reshape(p, {2, 32});
                return add(sum_all(mul(r, r)), sum_all(sum_per_image(reshape(c, {2, 4, 2, 4}))));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "layout ops";
    }
    {  // channel statistics
        std::vector<D> leaves{randt(rng, {2, 4, 3, 3})};
        double err = check(
            [&] {
                return add(sum_all(mul(mean_channels(leaves[0]), D::full({2, 1, 3, 3}, 0.6))),
                           sum_all(mul(max_channels(leaves[0]), D::full({2, 1, 3, 3}, 0.8))));
            },
            leaves);
        EXPECT_LT(err, 1e-4) << "channel stats";
    }
}

TEST(Properties, SoftmaxRowsSumToOne) {
    Rng rng(4);
    D x = randt(rng, {7, 11}, 3.0);
    D y = softmax_lastdim(x);
    for (long i = 0; i < 7; ++i) {
        double s = 0;
        for (long j = 0; j < 11; ++j) s += y.at({i, j});
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Properties, LayerNormStandardizes) {
    Rng rng(5);
    D x = randt(rng, {6, 16}, 2.0);
    D y = layer_norm(x, D::ones({16}), D::zeros({16}), 1e-6);
    for (long i = 0; i < 6; ++i) {
        double m = 0, v = 0;
        for (long j = 0; j < 16; ++j) m += y.at({i, j});
        m /= 16;
        for (long j = 0; j < 16; ++j) v += (y.at({i, j}) - m) * (y.at({i, j}) - m);
        v /= 16;
        EXPECT_LE(std::abs(m), 1e-6);
        EXPECT_NEAR(v, 1.0, 1e-5);
    }
}

TEST(Properties, BilinearConstantPreserved) {
    D x = D::full({1, 2, 5, 5}, 3.25);
    for (const D& y : {upsample2x(x), resize_bilinear(x, 13, 7)})
        for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 3.25);
}

TEST(Properties, MaxPoolTieFirstIndex) {
    // all-equal window: gradient goes to the first element in row-major order
    D x = D::ones({1, 1, 2, 2}).set_requires_grad(true);
    sum_all(max_pool2d(x, 2, 2)).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Properties, DeterministicForward) {
    Rng rng(6);
    Tensor<float> x = Tensor<float>::randn(rng, {2, 3, 8, 8}, 1.0f);
    Rng r2(7);
    Tensor<float> w = Tensor<float>::randn(r2, {4, 3, 3, 3}, 0.1f);
    auto run = [&] { return conv2d(x, w, Tensor<float>{}, 1, 1).vec(); };
    EXPECT_EQ(run(), run());
}

TEST(Properties, NoGradSkipsTape) {
    D x = D::ones({2}).set_requires_grad(true);
    NoGradGuard ng;
    D y = mul(x, x);
    EXPECT_TRUE(y.node->parents.empty());
}

TEST(GradCheck, NonFiniteReported) {
    std::vector<D> leaves{D::from({1}, {0.0})};
    leaves[0].set_requires_grad(true);
    EXPECT_THROW(check([&] { return div(D::ones({1}), mul(leaves[0], leaves[0])); }, leaves),
                 NumericError);
}

TEST(Util, AllFinite) {
    EXPECT_TRUE(all_finite(D::ones({3})));
    EXPECT_FALSE(all_finite(D::from({2}, {1.0, std::nan("")})));
}
