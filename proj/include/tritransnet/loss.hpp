#pragma once

// Pixel-position-aware loss: boundary-weighted BCE plus weighted IoU, computed
// from logits in log-sum-exp form. The weight map comes from a stride-1
// same-padded mean pool of the binary ground truth.

#include <vector>

#include "tritransnet/tensor.hpp"

namespace ttn {

template <typename T>
inline void check_binary(const Tensor<T>& g) {
    for (T v : g.vec())
        if (v != T(0) && v != T(1))
            throw DataError("loss: ground truth is not binary (found value " +
                            std::to_string((double)v) + ")");
}

// w = 1 + gain * |meanpool(G) - G|; constant (no-grad) given binary G.
template <typename T>
Tensor<T> ppa_weight_map(const Tensor<T>& gt, long window, T gain) {
    NoGradGuard ng;
    return add_scalar(mul_scalar(abs_val(sub(avg_pool_same(gt, window), gt)), gain), T(1));
}

template <typename T>
Tensor<T> ppa_loss(const Tensor<T>& logits, const Tensor<T>& gt, long window = 31,
                   T gain = T(5), T smooth = T(1)) {
    if (logits.shape() != gt.shape())
        throw ShapeError("loss: logits " + shape_str(logits.shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
    check_binary(gt);
    Tensor<T> w = ppa_weight_map(gt, window, gain);
    // per-pixel BCE from logits: softplus(x) - x*g
    Tensor<T> bce = sub(softplus(logits), mul(logits, gt));
    Tensor<T> wbce = div(sum_per_image(mul(w, bce)), sum_per_image(w));
    Tensor<T> p = sigmoid(logits);
    Tensor<T> pg = mul(p, gt);
    Tensor<T> inter = sum_per_image(mul(w, pg));
    Tensor<T> uni = sum_per_image(mul(w, sub(add(p, gt), pg)));
    Tensor<T> wiou = sub(Tensor<T>::ones({gt.dim(0)}),
                         div(add_scalar(inter, smooth), add_scalar(uni, smooth)));
    return mean_all(add(wbce, wiou));
}

// Plain (unweighted) BCE-from-logits fallback for debugging.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& gt) {
    if (logits.shape() != gt.shape())
        throw ShapeError("loss: logits " + shape_str(logits.shape()) + " vs ground truth " +
                         shape_str(gt.shape()));
    check_binary(gt);
    return mean_all(sub(softplus(logits), mul(logits, gt)));
}

// 1 + k addends: final plus each side output.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& final_logits, const std::vector<Tensor<T>>& side_logits,
                     const Tensor<T>& gt, long window = 31, T gain = T(5), T smooth = T(1),
                     const std::string& kind = "ppa") {
    auto one = [&](const Tensor<T>& l) {
        return kind == "bce" ? bce_loss(l, gt) : ppa_loss(l, gt, window, gain, smooth);
    };
    Tensor<T> total = one(final_logits);
    for (const auto& l : side_logits) total = add(total, one(l));
    return total;
}

}  // namespace ttn
