#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "cfld/codec.hpp"
#include "cfld/conditioning.hpp"
#include "cfld/config.hpp"
#include "cfld/denoiser.hpp"

namespace cfld {

struct Partition {
    std::vector<std::string> frozen;
    std::vector<std::string> trainable;
};

// The complete parameter store. Construction order is fixed, so a seed fully
// determines every initial weight.
template <typename T>
struct CfldModel {
    Config cfg;
    LatentCodec<T> codec;
    SourceEncoder<T> enc;
    PerceptionRefinedDecoder<T> prd;
    PoseAdapter<T> pose;
    UNet<T> unet;
    std::array<HgaAppearanceEncoder<T>, 3> hga;  // up scales coarse -> fine
    Tensor<T> null_embed;                        // [Q, D]

    static CfldModel build(const Config& cfg) {
        cfg.validate();
        Rng rng = Rng(cfg.seed).stream(Rng::key(0xC0DEC0DE));
        CfldModel m;
        m.cfg = cfg;
        m.codec = LatentCodec<T>(cfg.codec_channels, cfg.latent_channels, cfg.gn_groups, rng);
        m.enc = SourceEncoder<T>(cfg, rng);
        m.prd = PerceptionRefinedDecoder<T>(cfg, rng);
        m.pose = PoseAdapter<T>(cfg, rng);
        m.unet = UNet<T>(cfg, rng);
        // up scale l matches the source map of equal extent: up0 (coarsest)
        // reads f3, up1 reads f2, up2 reads f1
        m.hga[0] = HgaAppearanceEncoder<T>(cfg.enc_channels[2], cfg.unet_channels[2], cfg, rng);
        m.hga[1] = HgaAppearanceEncoder<T>(cfg.enc_channels[1], cfg.unet_channels[1], cfg, rng);
        m.hga[2] = HgaAppearanceEncoder<T>(cfg.enc_channels[0], cfg.unet_channels[0], cfg, rng);
        m.null_embed =
            Tensor<T>::zeros({std::size_t(cfg.prompt_queries), std::size_t(cfg.prompt_dim)});
        rng.fill_gaussian(m.null_embed.mutable_values(), 0.02);
        m.null_embed.set_requires_grad(true);
        return m;
    }

    ParamList<T> all_params() const {
        ParamList<T> out;
        codec.params("codec", out);
        enc.params("enc", out);
        prd.params("prd", out);
        pose.params("pose", out);
        unet.params("unet", out);
        for (int l = 0; l < 3; ++l) hga[l].params("hga.scale" + std::to_string(l), out);
        out.add("null_embed", null_embed);
        return out;
    }

    // The CFLD trainable set: H_S, H_D, H_P, phi_A, the null embeddings, and
    // within the UNet only the up-block cross-attention key/value projections.
    static bool cfld_trainable(const std::string& name) {
        if (name.rfind("enc.", 0) == 0 || name.rfind("prd.", 0) == 0 ||
            name.rfind("pose.", 0) == 0 || name.rfind("hga.", 0) == 0 ||
            name == "null_embed") {
            return true;
        }
        if (name.rfind("unet.up", 0) == 0) {
            const bool kv = name.find(".cross.wk.") != std::string::npos ||
                            name.find(".cross.wv.") != std::string::npos;
            if (kv) return true;
        }
        return false;
    }

    Partition partition() const {
        Partition p;
        for (const auto& [name, t] : all_params().items) {
            (cfld_trainable(name) ? p.trainable : p.frozen).push_back(name);
        }
        return p;
    }

    ParamList<T> trainable_params() const {
        ParamList<T> out;
        for (const auto& [name, t] : all_params().items) {
            if (cfld_trainable(name)) out.items.emplace_back(name, t);
        }
        return out;
    }

    ParamList<T> frozen_params() const {
        ParamList<T> out;
        for (const auto& [name, t] : all_params().items) {
            if (!cfld_trainable(name)) out.items.emplace_back(name, t);
        }
        return out;
    }

    // Parameters trained during unconditional backbone pretraining: the whole
    // UNet plus the null embeddings it conditions on.
    ParamList<T> backbone_params() const {
        ParamList<T> out;
        for (const auto& [name, t] : all_params().items) {
            if (name.rfind("unet.", 0) == 0 || name == "null_embed") {
                out.items.emplace_back(name, t);
            }
        }
        return out;
    }

    ParamList<T> codec_params() const {
        ParamList<T> out;
        for (const auto& [name, t] : all_params().items) {
            if (name.rfind("codec.", 0) == 0) out.items.emplace_back(name, t);
        }
        return out;
    }

    // Set requires_grad to match the CFLD partition.
    void apply_cfld_partition() {
        for (auto& [name, t] : all_params().items) {
            Tensor<T> h = t;
            h.set_requires_grad(cfld_trainable(name));
        }
    }
};

}  // namespace cfld
