#pragma once

// Transition layer plus progressively upsampling fusion: brings the top-k
// purified levels to a common channel count and the lowest selected level's
// resolution. The lowest selected level passes through bit-identical.

#include <string>
#include <vector>

#include "tritransnet/nn.hpp"

namespace ttn {

template <typename T>
struct Ufm {
    Conv2d<T> up_conv;   // Ct -> Ct after the 2x upsample
    Conv2d<T> cat_conv;  // 2Ct -> Ct reduction

    Ufm() = default;
    Ufm(Rng& rng, long ct) {
        up_conv = Conv2d<T>(rng, ct, ct, 3, 1, 1);
        cat_conv = Conv2d<T>(rng, 2 * ct, ct, 3, 1, 1);
    }
    Tensor<T> operator()(const Tensor<T>& high, const Tensor<T>& low) const {
        if (high.dim(2) * 2 != low.dim(2) || high.dim(3) * 2 != low.dim(3))
            throw ShapeError("ufm: high " + shape_str(high.shape()) +
                             " is not half the resolution of low " + shape_str(low.shape()));
        Tensor<T> u = relu(up_conv(upsample2x(high)));
        return relu(cat_conv(concat<T>({u, low}, 1)));
    }
    void params(ParamList<T>& p, const std::string& prefix) const {
        up_conv.params(p, prefix + ".up");
        cat_conv.params(p, prefix + ".cat");
    }
};

template <typename T>
struct ScaleAdjust {
    long k = 3;
    std::vector<Conv2d<T>> transitions;    // one per selected level, lowest first
    std::vector<std::vector<Ufm<T>>> ufms; // ufms[j]: chain applied to level l0+j (length j)

    ScaleAdjust() = default;
    ScaleAdjust(Rng& rng, const std::array<long, 5>& ch, long ct, long k_) : k(k_) {
        if (k < 2 || k > 4) throw ShapeError("scale_adjust: k must be in {2,3,4}");
        long l0 = 5 - k;  // 0-based index of the lowest selected level
        for (long j = 0; j < k; ++j) transitions.emplace_back(rng, ch[l0 + j], ct, 3, 1, 1);
        ufms.resize(k);
        for (long j = 0; j < k; ++j)
            for (long t = 0; t < j; ++t) ufms[j].emplace_back(rng, ct);
    }

    // Input: all five fused levels; output: k aligned maps, lowest level first.
    std::vector<Tensor<T>> align(const std::array<Tensor<T>, 5>& fused) const {
        long l0 = 5 - k;
        std::vector<Tensor<T>> trans(k);
        for (long j = 0; j < k; ++j) trans[j] = relu(transitions[j](fused[l0 + j]));
        std::vector<Tensor<T>> out(k);
        for (long j = 0; j < k; ++j) {
            Tensor<T> r = trans[j];
            // progressive descent through every selected level below j
            for (long t = j - 1; t >= 0; --t) r = ufms[j][j - 1 - t](r, trans[t]);
            out[j] = r;
        }
        return out;
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        long l0 = 5 - k;
        for (long j = 0; j < k; ++j) {
            std::string lv = std::to_string(l0 + j + 1);
            transitions[j].params(p, prefix + ".trans" + lv);
            for (size_t t = 0; t < ufms[j].size(); ++t)
                ufms[j][t].params(p, prefix + ".ufm" + lv + "_" + std::to_string(t));
        }
    }
};

}  // namespace ttn
