#pragma once

// Triplet transformer embedding module. One tokenization pipeline and one
// pre-norm transformer encoder stack, referenced by all k streams; only the
// per-stream concatenation reduction convs are unshared.

#include <cmath>
#include <string>
#include <vector>

#include "tritransnet/nn.hpp"

namespace ttn {

template <typename T>
struct TransformerLayer {
    LayerNorm<T> ln1, ln2;
    Linear<T> wq, wk, wv, wo;
    Linear<T> fc1, fc2;  // D -> 4D -> D, GELU
    long heads = 1;

    TransformerLayer() = default;
    TransformerLayer(Rng& rng, long d, long h) : heads(h) {
        ln1 = LayerNorm<T>(d);
        ln2 = LayerNorm<T>(d);
        wq = Linear<T>(rng, d, d, 't');
        wk = Linear<T>(rng, d, d, 't');
        wv = Linear<T>(rng, d, d, 't');
        wo = Linear<T>(rng, d, d, 't');
        fc1 = Linear<T>(rng, d, 4 * d, 't');
        fc2 = Linear<T>(rng, 4 * d, d, 't');
    }

    // Multi-headed self-attention on a normalized input [B,N,D].
    Tensor<T> msa(const Tensor<T>& zn, Tensor<T>* probs_out = nullptr) const {
        long b = zn.dim(0), n = zn.dim(1), d = zn.dim(2);
        long dh = d / heads;
        auto split = [&](const Tensor<T>& t) {
            return permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3});  // [B,h,N,dh]
        };
        Tensor<T> q = split(wq(zn)), k = split(wk(zn)), v = split(wv(zn));
        Tensor<T> scores = mul_scalar(matmul(q, permute(k, {0, 1, 3, 2})),
                                      T(1) / std::sqrt(T(dh)));
        Tensor<T> probs = softmax_lastdim(scores);  // [B,h,N,N]
        if (probs_out) *probs_out = probs;
        Tensor<T> ctx = permute(matmul(probs, v), {0, 2, 1, 3});  // [B,N,h,dh]
        return wo(reshape(ctx, {b, n, d}));
    }

    Tensor<T> operator()(const Tensor<T>& z, Tensor<T>* probs_out = nullptr) const {
        Tensor<T> z1 = add(msa(ln1(z), probs_out), z);
        return add(fc2(gelu(fc1(ln2(z1)))), z1);
    }

    void params(ParamList<T>& p, const std::string& prefix) const {
        ln1.params(p, prefix + ".ln1");
        ln2.params(p, prefix + ".ln2");
        wq.params(p, prefix + ".wq");
        wk.params(p, prefix + ".wk");
        wv.params(p, prefix + ".wv");
        wo.params(p, prefix + ".wo");
        fc1.params(p, prefix + ".fc1");
        fc2.params(p, prefix + ".fc2");
    }
};

template <typename T>
struct Ttem {
    long n_tokens = 0, embed_dim = 0, ct = 0;
    Linear<T> patch_proj;                  // Ct -> D (shared)
    Tensor<T> pos_embed;                   // [N,D], learnable, zero init (shared)
    std::vector<TransformerLayer<T>> layers;
    Linear<T> back_proj;                   // D -> Ct, acts as a 1x1 conv (shared)
    std::vector<Conv2d<T>> stream_reduce;  // per-stream 2Ct -> Ct (unshared)

    Ttem() = default;
    Ttem(Rng& rng, long ct_, long n, long d, long l, long h, long k) : n_tokens(n), embed_dim(d), ct(ct_) {
        patch_proj = Linear<T>(rng, ct, d, 't');
        pos_embed = Tensor<T>::zeros({n, d}).set_requires_grad(true);
        for (long i = 0; i < l; ++i) layers.emplace_back(rng, d, h);
        back_proj = Linear<T>(rng, d, ct, 't');
        for (long i = 0; i < k; ++i) stream_reduce.emplace_back(rng, 2 * ct, ct, 3, 1, 1);
    }

    // [B,Ct,H,W] -> tokens [B,N,D] in row-major spatial order, plus PE.
    Tensor<T> embed(const Tensor<T>& f) const {
        long b = f.dim(0), h = f.dim(2), w = f.dim(3);
        if (h * w != n_tokens)
            throw ShapeError("ttem: expected " + std::to_string(n_tokens) + " tokens, input " +
                             shape_str(f.shape()) + " yields " + std::to_string(h * w));
        Tensor<T> x = permute(reshape(f, {b, ct, h * w}), {0, 2, 1});  // [B,N,Ct]
        return add(patch_proj(x), reshape(pos_embed, {1, n_tokens, embed_dim}));
    }

    Tensor<T> encode(Tensor<T> z) const {
        for (const auto& layer : layers) z = layer(z);
        return z;
    }

    // Inverse of embed's flattening, then the back projection.
    Tensor<T> tokens_to_map(const Tensor<T>& z, long h, long w) const {
        long b = z.dim(0);
        Tensor<T> y = back_proj(z);  // [B,N,Ct]
        return reshape(permute(y, {0, 2, 1}), {b, ct, h, w});
    }

    std::vector<Tensor<T>> enhance(const std::vector<Tensor<T>>& levels) const {
        if (levels.size() != stream_reduce.size())
            throw ShapeError("ttem: got " + std::to_string(levels.size()) + " streams, expected " +
                             std::to_string(stream_reduce.size()));
        std::vector<Tensor<T>> out;
        for (size_t i = 0; i < levels.size(); ++i) {
            const Tensor<T>& f = levels[i];
            Tensor<T> z = encode(embed(f));
            Tensor<T> y = tokens_to_map(z, f.dim(2), f.dim(3));
            out.push_back(relu(stream_reduce[i](concat<T>({y, f}, 1))));
        }
        return out;
    }

    void shared_params(ParamList<T>& p, const std::string& prefix) const {
        patch_proj.params(p, prefix + ".proj");
        p.add(prefix + ".pos_embed", pos_embed);
        for (size_t i = 0; i < layers.size(); ++i)
            layers[i].params(p, prefix + ".layer" + std::to_string(i));
        back_proj.params(p, prefix + ".back_proj");
    }
    void params(ParamList<T>& p, const std::string& prefix) const {
        shared_params(p, prefix + ".shared");
        for (size_t i = 0; i < stream_reduce.size(); ++i)
            stream_reduce[i].params(p, prefix + ".stream" + std::to_string(i) + ".reduce");
    }
};

}  // namespace ttn
