#pragma once

// Depth purification module: CBAM-style channel then spatial attention masks
// gate the depth feature before residual attachment to the color feature.

#include <string>

#include "tritransnet/nn.hpp"

namespace ttn {

template <typename T>
struct Dpm {
    Conv2d<T> cat_conv;   // 2C -> C, 3x3
    Linear<T> ca_fc1;     // C -> C/r (shared bottleneck)
    Linear<T> ca_fc2;     // C/r -> C
    Conv2d<T> sa_conv;    // 2 -> 1, 7x7 pad 3
    bool pin_masks = false;  // test hook: replace both masks with all-ones

    Dpm() = default;
    Dpm(Rng& rng, long c, long reduction) {
        if (c < reduction)
            throw ShapeError("dpm: channels " + std::to_string(c) + " below reduction " +
                             std::to_string(reduction));
        cat_conv = Conv2d<T>(rng, 2 * c, c, 3, 1, 1);
        ca_fc1 = Linear<T>(rng, c, c / reduction);
        ca_fc2 = Linear<T>(rng, c / reduction, c);
        sa_conv = Conv2d<T>(rng, 2, 1, 7, 1, 3);
    }

    // [B,C,H,W] -> channel mask [B,C,1,1], entries in (0,1).
    Tensor<T> channel_attention(const Tensor<T>& x) const {
        long b = x.dim(0), c = x.dim(1);
        auto mlp = [&](const Tensor<T>& pooled) {
            return ca_fc2(relu(ca_fc1(reshape(pooled, {b, c}))));
        };
        Tensor<T> s = add(mlp(global_avg_pool(x)), mlp(global_max_pool(x)));
        return reshape(sigmoid(s), {b, c, 1, 1});
    }

    // [B,C,H,W] -> spatial mask [B,1,H,W].
    Tensor<T> spatial_attention(const Tensor<T>& x) const {
        Tensor<T> m = concat<T>({mean_channels(x), max_channels(x)}, 1);
        return sigmoid(sa_conv(m));
    }

    // Eq-style purification: (f_d * CA) * SA + f_r.
    Tensor<T> purify(const Tensor<T>& f_r, const Tensor<T>& f_d) const {
        if (f_r.shape() != f_d.shape())
            throw ShapeError("dpm: modality shapes differ, " + shape_str(f_r.shape()) + " vs " +
                             shape_str(f_d.shape()));
        long b = f_r.dim(0), c = f_r.dim(1), h = f_r.dim(2), w = f_r.dim(3);
        Tensor<T> m = relu(cat_conv(concat<T>({f_d, f_r}, 1)));
        Tensor<T> ca = pin_masks ? Tensor<T>::ones({b, c, 1, 1}) : channel_attention(m);
        Tensor<T> d1 = mul(f_d, ca);
        Tensor<T> sa = pin_masks ? Tensor<T>::ones({b, 1, h, w}) : spatial_attention(d1);
        return add(mul(d1, sa), f_r);
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        cat_conv.params(p, prefix + ".cat");
        ca_fc1.params(p, prefix + ".ca_fc1");
        ca_fc2.params(p, prefix + ".ca_fc2");
        sa_conv.params(p, prefix + ".sa");
    }
};

}  // namespace ttn
