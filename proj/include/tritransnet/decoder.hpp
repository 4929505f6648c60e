#pragma once

// Deeply supervised decoder. Each stream lifts its enhanced level through the
// low-level features to stride 2, then a shared-per-stream head produces
// input-resolution logits; the final map is sigmoid of the logit sum.

#include <string>
#include <vector>

#include "tritransnet/nn.hpp"

namespace ttn {

template <typename T>
struct DecoderStream {
    Conv2d<T> tr2, tr1;   // level-2 / level-1 transitions to Ct
    Conv2d<T> cat2, cat1; // 2Ct -> Ct fusions
    Conv2d<T> head_conv;  // Ct -> Ct at input resolution
    Conv2d<T> out_conv;   // Ct -> 1 logits

    DecoderStream() = default;
    DecoderStream(Rng& rng, long ch2, long ch1, long ct) {
        tr2 = Conv2d<T>(rng, ch2, ct, 3, 1, 1);
        tr1 = Conv2d<T>(rng, ch1, ct, 3, 1, 1);
        cat2 = Conv2d<T>(rng, 2 * ct, ct, 3, 1, 1);
        cat1 = Conv2d<T>(rng, 2 * ct, ct, 3, 1, 1);
        head_conv = Conv2d<T>(rng, ct, ct, 3, 1, 1);
        out_conv = Conv2d<T>(rng, ct, 1, 3, 1, 1);
    }

    // f_i: enhanced level; f2/f1: fused encoder levels 2 and 1. Output stride 2.
    Tensor<T> decode(const Tensor<T>& f_i, const Tensor<T>& f2, const Tensor<T>& f1) const {
        Tensor<T> f2t = relu(tr2(f2));
        Tensor<T> f1t = relu(tr1(f1));
        Tensor<T> x = f_i;
        if (x.dim(2) > f2t.dim(2))
            throw ShapeError("decoder: enhanced level " + shape_str(x.shape()) +
                             " finer than level-2 feature " + shape_str(f2t.shape()));
        while (x.dim(2) < f2t.dim(2)) x = upsample2x(x);
        if (x.dim(2) != f2t.dim(2))
            throw ShapeError("decoder: resolution chain broken between " + shape_str(x.shape()) +
                             " and " + shape_str(f2t.shape()));
        x = relu(cat2(concat<T>({x, f2t}, 1)));
        x = upsample2x(x);
        if (x.dim(2) != f1t.dim(2))
            throw ShapeError("decoder: resolution chain broken between " + shape_str(x.shape()) +
                             " and " + shape_str(f1t.shape()));
        return relu(cat1(concat<T>({x, f1t}, 1)));
    }

    // Stride-2 feature -> logits at the network input resolution.
    Tensor<T> logits(const Tensor<T>& fpp, long h_in, long w_in) const {
        Tensor<T> x = relu(head_conv(upsample2x(fpp)));
        if (x.dim(2) != h_in || x.dim(3) != w_in) x = resize_bilinear(x, h_in, w_in);
        return out_conv(x);
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        tr2.params(p, prefix + ".tr2");
        tr1.params(p, prefix + ".tr1");
        cat2.params(p, prefix + ".cat2");
        cat1.params(p, prefix + ".cat1");
        head_conv.params(p, prefix + ".head");
        out_conv.params(p, prefix + ".out");
    }
};

template <typename T>
struct Decoder {
    std::string mode = "three";
    long k = 3;
    std::vector<DecoderStream<T>> streams;  // k streams, or 1 in single mode
    Conv2d<T> single_fuse;                  // kCt -> Ct (single mode only)

    struct Output {
        std::vector<Tensor<T>> side_logits;  // k entries in three-stream mode, else empty
        Tensor<T> final_logits;
    };

    Decoder() = default;
    Decoder(Rng& rng, long ch2, long ch1, long ct, long k_, const std::string& mode_)
        : mode(mode_), k(k_) {
        if (mode == "three") {
            for (long i = 0; i < k; ++i) streams.emplace_back(rng, ch2, ch1, ct);
        } else {
            single_fuse = Conv2d<T>(rng, k * ct, ct, 3, 1, 1);
            streams.emplace_back(rng, ch2, ch1, ct);
        }
    }

    Output forward(const std::vector<Tensor<T>>& enhanced, const Tensor<T>& f2,
                   const Tensor<T>& f1, long h_in, long w_in) const {
        if ((long)enhanced.size() != k)
            throw ShapeError("decoder: got " + std::to_string(enhanced.size()) +
                             " streams, expected " + std::to_string(k));
        Output out;
        if (mode == "three") {
            for (long i = 0; i < k; ++i) {
                Tensor<T> fpp = streams[i].decode(enhanced[i], f2, f1);
                out.side_logits.push_back(streams[i].logits(fpp, h_in, w_in));
            }
            // sum before sigmoid, deterministic left-to-right order
            Tensor<T> s = out.side_logits[0];
            for (long i = 1; i < k; ++i) s = add(s, out.side_logits[i]);
            out.final_logits = s;
        } else {
            Tensor<T> fused = relu(single_fuse(concat(enhanced, 1)));
            Tensor<T> fpp = streams[0].decode(fused, f2, f1);
            out.final_logits = streams[0].logits(fpp, h_in, w_in);
        }
        return out;
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        if (mode == "single") single_fuse.params(p, prefix + ".fuse");
        for (size_t i = 0; i < streams.size(); ++i)
            streams[i].params(p, prefix + ".stream" + std::to_string(i));
    }
};

}  // namespace ttn
