#pragma once

// Two-stream five-stage convolutional encoder. Stage strides 2..32; one
// structurally identical but independently parameterized instance per modality.

#include <array>
#include <string>

#include "tritransnet/nn.hpp"

namespace ttn {

template <typename T>
struct Backbone {
    Conv2d<T> stem;  // 3 -> ch1, stride 2
    struct Stage {
        Conv2d<T> down;  // ch_{i-1} -> ch_i, stride 2
        Conv2d<T> same;  // ch_i -> ch_i, stride 1, residual
    };
    std::array<Stage, 4> stages;

    Backbone() = default;
    Backbone(Rng& rng, const std::array<long, 5>& ch) {
        stem = Conv2d<T>(rng, 3, ch[0], 3, 2, 1);
        for (int i = 0; i < 4; ++i) {
            stages[i].down = Conv2d<T>(rng, ch[i], ch[i + 1], 3, 2, 1);
            stages[i].same = Conv2d<T>(rng, ch[i + 1], ch[i + 1], 3, 1, 1);
        }
    }

    std::array<Tensor<T>, 5> encode(const Tensor<T>& img) const {
        if (img.rank() != 4 || img.dim(1) != 3)
            throw ShapeError("backbone: expected [B,3,H,W], got " + shape_str(img.shape()));
        if (img.dim(2) % 32 != 0 || img.dim(3) % 32 != 0)
            throw ShapeError("backbone: spatial size " + std::to_string(img.dim(2)) + "x" +
                             std::to_string(img.dim(3)) + " must be divisible by 32");
        std::array<Tensor<T>, 5> levels;
        Tensor<T> x = relu(stem(img));
        levels[0] = x;
        for (int i = 0; i < 4; ++i) {
            Tensor<T> y = relu(stages[i].down(x));
            x = relu(add(stages[i].same(y), y));
            levels[i + 1] = x;
        }
        return levels;
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        stem.params(p, prefix + ".stem");
        for (int i = 0; i < 4; ++i) {
            stages[i].down.params(p, prefix + ".stage" + std::to_string(i + 2) + ".down");
            stages[i].same.params(p, prefix + ".stage" + std::to_string(i + 2) + ".same");
        }
    }
};

// Single-channel depth replicated to 3 channels so both streams share structure.
template <typename T>
Tensor<T> replicate3(const Tensor<T>& depth) {
    if (depth.rank() != 4 || depth.dim(1) != 1)
        throw ShapeError("replicate3: expected [B,1,H,W], got " + shape_str(depth.shape()));
    return concat<T>({depth, depth, depth}, 1);
}

}  // namespace ttn
