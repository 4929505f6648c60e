#pragma once

// Full network: two-stream encoder, depth purification (or plain addition),
// scale adjustment, optional shared-weight transformer enhancement, decoder.

#include <vector>

#include "tritransnet/backbone.hpp"
#include "tritransnet/config.hpp"
#include "tritransnet/decoder.hpp"
#include "tritransnet/dpm.hpp"
#include "tritransnet/scale_adjust.hpp"
#include "tritransnet/ttem.hpp"

namespace ttn {

template <typename T>
struct TriTransNet {
    ModelConfig cfg;
    Backbone<T> enc_rgb, enc_depth;
    std::vector<Dpm<T>> dpms;  // five levels; empty in "add" fusion mode
    ScaleAdjust<T> adjust;
    Ttem<T> ttem;  // constructed only when cfg.use_ttem
    Decoder<T> decoder;

    struct Output {
        std::vector<Tensor<T>> side_logits;
        Tensor<T> final_logits;
        Tensor<T> final_map() const { return sigmoid(final_logits); }
        std::vector<Tensor<T>> side_maps() const {
            std::vector<Tensor<T>> m;
            for (const auto& l : side_logits) m.push_back(sigmoid(l));
            return m;
        }
    };

    TriTransNet() = default;
    TriTransNet(const ModelConfig& cfg_, unsigned long long seed) : cfg(cfg_) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0x6d6f64656c));
        enc_rgb = Backbone<T>(rng, cfg.channels);
        enc_depth = Backbone<T>(rng, cfg.channels);
        if (cfg.fusion_mode == "dpm")
            for (long i = 0; i < 5; ++i) dpms.emplace_back(rng, cfg.channels[i], cfg.cbam_reduction);
        adjust = ScaleAdjust<T>(rng, cfg.channels, cfg.ct, cfg.k);
        if (cfg.use_ttem)
            ttem = Ttem<T>(rng, cfg.ct, cfg.tokens(), cfg.embed_dim, cfg.num_layers,
                           cfg.num_heads, cfg.k);
        decoder = Decoder<T>(rng, cfg.channels[1], cfg.channels[0], cfg.ct, cfg.k,
                             cfg.decoder_mode);
    }

    Output forward(const Tensor<T>& rgb, const Tensor<T>& depth) const {
        long h = rgb.dim(2), w = rgb.dim(3);
        if (depth.dim(2) != h || depth.dim(3) != w || depth.dim(0) != rgb.dim(0))
            throw ShapeError("model: rgb " + shape_str(rgb.shape()) + " and depth " +
                             shape_str(depth.shape()) + " are not aligned");
        auto fr = enc_rgb.encode(rgb);
        auto fd = enc_depth.encode(replicate3(depth));
        std::array<Tensor<T>, 5> fused;
        for (long i = 0; i < 5; ++i)
            fused[i] = cfg.fusion_mode == "dpm" ? dpms[i].purify(fr[i], fd[i])
                                                : add(fr[i], fd[i]);
        std::vector<Tensor<T>> aligned = adjust.align(fused);
        std::vector<Tensor<T>> enhanced = cfg.use_ttem ? ttem.enhance(aligned) : aligned;
        auto dec = decoder.forward(enhanced, fused[1], fused[0], h, w);
        return Output{std::move(dec.side_logits), std::move(dec.final_logits)};
    }

    ParamList<T> parameters() const {
        ParamList<T> p;
        enc_rgb.params(p, "backbone.rgb");
        enc_depth.params(p, "backbone.depth");
        for (size_t i = 0; i < dpms.size(); ++i)
            dpms[i].params(p, "dpm.level" + std::to_string(i + 1));
        adjust.params(p, "adjust");
        if (cfg.use_ttem) ttem.params(p, "ttem");
        decoder.params(p, "decoder");
        return p;
    }
};

}  // namespace ttn
