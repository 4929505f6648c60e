#include <gtest/gtest.h>

#include "tritransnet/gradcheck.hpp"
#include "tritransnet/loss.hpp"

using namespace ttn;
using D = Tensor<double>;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop reimplementation of the weighted BCE + weighted IoU loss.
double ppa_oracle(const std::vector<double>& logits, const std::vector<double>& g, long h, long w,
                  long window, double gain, double smooth) {
    long r = window / 2;
    std::vector<double> wmap((size_t)(h * w));
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double s = 0;
            for (long dy = -r; dy <= r; ++dy)
                for (long dx = -r; dx <= r; ++dx) {
                    long yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w) s += g[yy * w + xx];
                }
            double pooled = s / (double)(window * window);  // zero padding, full divisor
            wmap[y * w + x] = 1.0 + gain * std::abs(pooled - g[y * w + x]);
        }
    double wbce_num = 0, wbce_den = 0, inter = 0, uni = 0;
    for (long i = 0; i < h * w; ++i) {
        double p = sig(logits[i]);
        double bce = -(g[i] * std::log(p) + (1.0 - g[i]) * std::log(1.0 - p));
        wbce_num += wmap[i] * bce;
        wbce_den += wmap[i];
        inter += wmap[i] * p * g[i];
        uni += wmap[i] * (p + g[i] - p * g[i]);
    }
    return wbce_num / wbce_den + (1.0 - (inter + smooth) / (uni + smooth));
}

}  // namespace

TEST(WeightMap, RangeAndInteriorConstancy) {
    // checkerboard: weights live in [1, 6]
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = ((i / 8) + (i % 8)) % 2;
    D gt = D::from({1, 1, 8, 8}, std::vector<double>(g));
    D w = ppa_weight_map(gt, 3, 5.0);
    for (double v : w.vec()) {
        EXPECT_GE(v, 1.0);
        EXPECT_LE(v, 6.0);
    }
    // constant GT inside the window -> weight exactly 1 away from the border
    D ones_gt = D::ones({1, 1, 9, 9});
    D w1 = ppa_weight_map(ones_gt, 3, 5.0);
    EXPECT_DOUBLE_EQ(w1.at({0, 0, 4, 4}), 1.0);
    EXPECT_GT(w1.at({0, 0, 0, 0}), 1.0);  // zero padding shows at the border
}

TEST(PpaLoss, AllBackgroundConfidentIsNearZero) {
    D gt = D::zeros({1, 1, 8, 8});
    D logits = D::full({1, 1, 8, 8}, -40.0);
    EXPECT_NEAR(ppa_loss(logits, gt).item(), 0.0, 1e-6);
}

TEST(PpaLoss, AllForegroundConfidentIsNearZero) {
    D gt = D::ones({1, 1, 8, 8});
    D logits = D::full({1, 1, 8, 8}, 40.0);
    EXPECT_NEAR(ppa_loss(logits, gt).item(), 0.0, 1e-6);
}

TEST(PpaLoss, CheckerboardMatchesScalarOracle) {
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = ((i / 8) + (i % 8)) % 2;
    D gt = D::from({1, 1, 8, 8}, std::vector<double>(g));
    D logits = D::zeros({1, 1, 8, 8});
    double oracle = ppa_oracle(std::vector<double>(64, 0.0), g, 8, 8, 31, 5.0, 1.0);
    EXPECT_NEAR(ppa_loss(logits, gt).item(), oracle, 1e-6);
    // and with a non-trivial window and random logits
    Rng rng(0);
    D rl = D::randn(rng, {1, 1, 8, 8}, 2.0);
    std::vector<double> lv(rl.vec().begin(), rl.vec().end());
    EXPECT_NEAR(ppa_loss(rl, gt, 5).item(), ppa_oracle(lv, g, 8, 8, 5, 5.0, 1.0), 1e-6);
}

TEST(PpaLoss, BatchAveraged) {
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = ((i / 8) + (i % 8)) % 2;
    std::vector<double> g2(128);
    std::copy(g.begin(), g.end(), g2.begin());  // image 2 is all background
    D gt = D::from({2, 1, 8, 8}, std::move(g2));
    D logits = D::full({2, 1, 8, 8}, 0.5);
    double per0 = ppa_oracle(std::vector<double>(64, 0.5), g, 8, 8, 31, 5.0, 1.0);
    double per1 = ppa_oracle(std::vector<double>(64, 0.5), std::vector<double>(64, 0.0), 8, 8, 31,
                             5.0, 1.0);
    EXPECT_NEAR(ppa_loss(logits, gt).item(), 0.5 * (per0 + per1), 1e-6);
}

TEST(PpaLoss, NonBinaryGtRejected) {
    D gt = D::full({1, 1, 4, 4}, 0.5);
    EXPECT_THROW(ppa_loss(D::zeros({1, 1, 4, 4}), gt), DataError);
    EXPECT_THROW(ppa_loss(D::zeros({1, 1, 4, 4}), D::zeros({1, 1, 2, 2})), ShapeError);
}

TEST(TotalLoss, AdditivityAndTermCount) {
    Rng rng(1);
    D gt = D::from({1, 1, 8, 8}, [] {
        std::vector<double> v(64);
        for (long i = 0; i < 64; ++i) v[i] = (i % 3) == 0 ? 1.0 : 0.0;
        return v;
    }());
    D fin = D::randn(rng, {1, 1, 8, 8}, 1.0);
    std::vector<D> sides{D::randn(rng, {1, 1, 8, 8}, 1.0), D::randn(rng, {1, 1, 8, 8}, 1.0),
                         D::randn(rng, {1, 1, 8, 8}, 1.0)};
    double total = total_loss(fin, sides, gt).item();
    double expect = ppa_loss(fin, gt).item();
    for (const auto& s : sides) expect += ppa_loss(s, gt).item();  // 1 + k addends
    EXPECT_NEAR(total, expect, 1e-6);
    // single-stream mode: no side terms
    EXPECT_NEAR(total_loss(fin, {}, gt).item(), ppa_loss(fin, gt).item(), 1e-12);
}

TEST(TotalLoss, PerfectPredictionsNearZero) {
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = (i % 2) ? 1.0 : 0.0;
    D gt = D::from({1, 1, 8, 8}, std::vector<double>(g));
    std::vector<double> lv(64);
    for (long i = 0; i < 64; ++i) lv[i] = g[i] > 0.5 ? 40.0 : -40.0;
    D logits = D::from({1, 1, 8, 8}, std::move(lv));
    EXPECT_NEAR(total_loss(logits, {logits, logits, logits}, gt).item(), 0.0, 1e-5);
}

TEST(TotalLoss, BceFallback) {
    D gt = D::zeros({1, 1, 4, 4});
    D logits = D::zeros({1, 1, 4, 4});
    EXPECT_NEAR(total_loss(logits, {}, gt, 31, 5.0, 1.0, "bce").item(), std::log(2.0), 1e-9);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = ((i / 8) + (i % 8)) % 2;
    D gt = D::from({1, 1, 8, 8}, std::move(g));
    Rng rng(2);
    std::vector<D> leaves{D::randn(rng, {1, 1, 8, 8}, 1.0)};
    double err = grad_check([&] { return ppa_loss(leaves[0], gt, 5); }, leaves);
    EXPECT_LT(err, 1e-4);
}

TEST(Loss, MonotoneDecreaseUnderGradientDescent) {
    std::vector<double> g(64);
    for (long i = 0; i < 64; ++i) g[i] = ((i / 8) + (i % 8)) % 2;
    D gt = D::from({1, 1, 8, 8}, std::move(g));
    Rng rng(3);
    D logits = D::randn(rng, {1, 1, 8, 8}, 0.5).set_requires_grad(true);
    double prev = 1e18;
    for (int step = 0; step < 20; ++step) {
        logits.zero_grad();
        D l = ppa_loss(logits, gt, 5);
        EXPECT_LT(l.item(), prev) << "step " << step;
        prev = l.item();
        l.backward();
        for (long i = 0; i < 64; ++i) logits.vec()[i] -= 0.5 * logits.grad()[i];
    }
}
