#include <gtest/gtest.h>

#include "tritransnet/dpm.hpp"
#include "tritransnet/gradcheck.hpp"

using namespace ttn;
using D = Tensor<double>;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Hand-rolled CBAM channel branch: avg/max pool -> shared two-layer MLP -> sum.
std::vector<double> channel_oracle(const Dpm<double>& dpm, const D& x) {
    long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    long r = dpm.ca_fc1.w.dim(1);
    auto mlp = [&](const std::vector<double>& in) {
        std::vector<double> h((size_t)r, 0.0), out((size_t)c, 0.0);
        for (long j = 0; j < r; ++j) {
            double s = dpm.ca_fc1.b.vec()[j];
            for (long i = 0; i < c; ++i) s += in[i] * dpm.ca_fc1.w.at({i, j});
            h[j] = std::max(0.0, s);
        }
        for (long j = 0; j < c; ++j) {
            double s = dpm.ca_fc2.b.vec()[j];
            for (long i = 0; i < r; ++i) s += h[i] * dpm.ca_fc2.w.at({i, j});
            out[j] = s;
        }
        return out;
    };
    std::vector<double> mask((size_t)(b * c));
    for (long bi = 0; bi < b; ++bi) {
        std::vector<double> avg((size_t)c), mx((size_t)c);
        for (long ci = 0; ci < c; ++ci) {
            const double* p = x.data() + (bi * c + ci) * hw;
            double s = 0, m = p[0];
            for (long i = 0; i < hw; ++i) {
                s += p[i];
                m = std::max(m, p[i]);
            }
            avg[ci] = s / (double)hw;
            mx[ci] = m;
        }
        auto a = mlp(avg), m = mlp(mx);
        for (long ci = 0; ci < c; ++ci) mask[bi * c + ci] = sig(a[ci] + m[ci]);
    }
    return mask;
}

// Brute-force 7x7 same-pad conv over [mean;max] channel maps.
std::vector<double> spatial_oracle(const Dpm<double>& dpm, const D& x) {
    long b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> out((size_t)(b * h * w));
    for (long bi = 0; bi < b; ++bi) {
        std::vector<double> mean((size_t)(h * w)), mx((size_t)(h * w));
        for (long i = 0; i < h * w; ++i) {
            double s = 0, m = x.data()[(bi * c) * h * w + i];
            for (long ci = 0; ci < c; ++ci) {
                double v = x.data()[(bi * c + ci) * h * w + i];
                s += v;
                m = std::max(m, v);
            }
            mean[i] = s / (double)c;
            mx[i] = m;
        }
        for (long y = 0; y < h; ++y)
            for (long xx = 0; xx < w; ++xx) {
                double s = dpm.sa_conv.b.vec()[0];
                for (long ky = 0; ky < 7; ++ky)
                    for (long kx = 0; kx < 7; ++kx) {
                        long iy = y + ky - 3, ix = xx + kx - 3;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        s += mean[iy * w + ix] * dpm.sa_conv.w.at({0, 0, ky, kx});
                        s += mx[iy * w + ix] * dpm.sa_conv.w.at({0, 1, ky, kx});
                    }
                out[bi * h * w + y * w + xx] = sig(s);
            }
    }
    return out;
}

}  // namespace

TEST(ChannelAttention, ZeroInputHalfMask) {
    Rng rng(0);
    Dpm<double> dpm(rng, 8, 4);
    D mask = dpm.channel_attention(D::zeros({1, 8, 4, 4}));
    for (double v : mask.vec()) EXPECT_NEAR(v, 0.5, 1e-12);  // zero biases
}

TEST(ChannelAttention, ConstantInputAvgEqualsMax) {
    Rng rng(1);
    Dpm<double> dpm(rng, 8, 4);
    D x = D::full({1, 8, 4, 4}, 0.7);
    D mask = dpm.channel_attention(x);
    std::vector<double> oracle = channel_oracle(dpm, x);
    for (long i = 0; i < 8; ++i) EXPECT_NEAR(mask.vec()[i], oracle[i], 1e-12);
}

TEST(ChannelAttention, MatchesHandRolledOracle) {
    Rng rng(2);
    Dpm<double> dpm(rng, 8, 4);
    Rng xr(3);
    D x = D::randn(xr, {1, 8, 4, 4}, 1.0);
    std::vector<double> oracle = channel_oracle(dpm, x);
    D mask = dpm.channel_attention(x);
    ASSERT_EQ(mask.shape(), (Shape{1, 8, 1, 1}));
    for (long i = 0; i < 8; ++i) EXPECT_NEAR(mask.vec()[i], oracle[i], 1e-6);
}

TEST(ChannelAttention, TooFewChannelsRejected) {
    Rng rng(4);
    EXPECT_THROW(Dpm<double>(rng, 2, 4), ShapeError);
}

TEST(SpatialAttention, ZeroInputHalfMask) {
    Rng rng(5);
    Dpm<double> dpm(rng, 4, 4);
    D mask = dpm.spatial_attention(D::zeros({1, 4, 8, 8}));
    for (double v : mask.vec()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(SpatialAttention, ConstantInputConstantMask) {
    Rng rng(6);
    Dpm<double> dpm(rng, 4, 4);
    D mask = dpm.spatial_attention(D::full({1, 4, 8, 8}, 1.3));
    // same-padded conv on a constant is not spatially constant at the border;
    // the oracle is the ground truth here
    std::vector<double> oracle = spatial_oracle(dpm, D::full({1, 4, 8, 8}, 1.3));
    for (size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(mask.vec()[i], oracle[i], 1e-9);
    // interior entries (away from padding) are all equal
    double ref = mask.at({0, 0, 3, 3});
    EXPECT_NEAR(mask.at({0, 0, 3, 4}), ref, 1e-12);
    EXPECT_NEAR(mask.at({0, 0, 4, 4}), ref, 1e-12);
}

TEST(SpatialAttention, MatchesBruteForceOracle) {
    Rng rng(7);
    Dpm<double> dpm(rng, 4, 4);
    Rng xr(8);
    D x = D::randn(xr, {1, 4, 8, 8}, 1.0);
    D mask = dpm.spatial_attention(x);
    ASSERT_EQ(mask.shape(), (Shape{1, 1, 8, 8}));
    std::vector<double> oracle = spatial_oracle(dpm, x);
    for (size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(mask.vec()[i], oracle[i], 1e-6);
}

TEST(Purify, ZeroDepthIsExactPassthrough) {
    Rng rng(9);
    Dpm<double> dpm(rng, 8, 4);
    for (int trial = 0; trial < 100; ++trial) {
        Rng xr(100 + trial);
        D f_r = D::randn(xr, {1, 8, 4, 4}, 1.0);
        D out = dpm.purify(f_r, D::zeros({1, 8, 4, 4}));
        EXPECT_EQ(out.vec(), f_r.vec()) << "trial " << trial;
    }
}

TEST(Purify, PinnedMasksGiveAdditiveFusion) {
    Rng rng(10);
    Dpm<double> dpm(rng, 8, 4);
    dpm.pin_masks = true;
    for (int trial = 0; trial < 100; ++trial) {
        Rng xr(200 + trial);
        D f_r = D::randn(xr, {1, 8, 4, 4}, 1.0);
        D f_d = D::randn(xr, {1, 8, 4, 4}, 1.0);
        D out = dpm.purify(f_r, f_d);
        for (long i = 0; i < out.size(); ++i)
            EXPECT_EQ(out.vec()[i], f_d.vec()[i] + f_r.vec()[i]) << "trial " << trial;
    }
}

TEST(Purify, MaskRangesAndShape) {
    Rng rng(11);
    Dpm<double> dpm(rng, 8, 4);
    Rng xr(12);
    D f_r = D::randn(xr, {2, 8, 8, 8}, 1.0);
    D f_d = D::randn(xr, {2, 8, 8, 8}, 1.0);
    EXPECT_EQ(dpm.purify(f_r, f_d).shape(), f_r.shape());
    D m = relu(dpm.cat_conv(concat<double>({f_d, f_r}, 1)));
    D ca = dpm.channel_attention(m);
    for (double v : ca.vec()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    D sa = dpm.spatial_attention(f_d);
    for (double v : sa.vec()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    EXPECT_THROW(dpm.purify(f_r, D::zeros({2, 8, 4, 4})), ShapeError);
}

TEST(Purify, GradientMatchesFiniteDifferences) {
    Rng rng(13);
    Dpm<double> dpm(rng, 8, 4);
    Rng xr(14);
    D f_r = D::randn(xr, {1, 8, 4, 4}, 0.5);
    std::vector<D> leaves{D::randn(xr, {1, 8, 4, 4}, 0.5)};
    double err = grad_check([&] { return sum_all(dpm.purify(f_r, leaves[0])); }, leaves);
    EXPECT_LT(err, 1e-4);
}
