#pragma once

#include <array>
#include <optional>
#include <vector>

#include "cfld/config.hpp"
#include "cfld/nn.hpp"

// Conditioning signals: multi-scale appearance maps from the source encoder,
// the coarse-grained prompt from the perception-refined decoder, the pose
// feature pyramid from the adapter, and the learnable null embeddings that
// replace the prompt when the source image is dropped.

namespace cfld {

// Hierarchical 4-stage encoder: patchify stem (/4), then conv+attention
// stages halving the extent, giving maps at input/4, /8, /16, /32.
template <typename T>
struct SourceEncoder {
    Conv2d<T> patchify;
    std::array<ResBlock<T>, 4> res;
    std::array<TransformerLayer<T>, 4> attn;
    std::array<Conv2d<T>, 3> down;

    SourceEncoder() = default;
    SourceEncoder(const Config& cfg, Rng& rng) {
        const auto& ch = cfg.enc_channels;
        patchify = Conv2d<T>(3, ch[0], 4, 4, 0, rng);
        for (int l = 0; l < 4; ++l) {
            res[l] = ResBlock<T>(ch[l], ch[l], cfg.gn_groups, rng);
            attn[l] = TransformerLayer<T>(ch[l], cfg.attn_heads, rng);
        }
        for (int l = 0; l < 3; ++l) down[l] = Conv2d<T>(ch[l], ch[l + 1], 4, 2, 1, rng);
    }

    std::array<Tensor<T>, 4> forward(const Tensor<T>& img) const {
        numkit::check(img.rank() == 3 && img.dim(0) == 3 && img.dim(1) == img.dim(2),
                      "encode_source: image must be square [3,H,H], got " +
                          numkit::shape_str(img.shape()));
        numkit::check(img.dim(1) % 32 == 0,
                      "encode_source: extent " + std::to_string(img.dim(1)) +
                          " must divide by 32 (stem /4 plus three /2 stages)");
        std::array<Tensor<T>, 4> maps;
        Tensor<T> x = patchify.forward(img);
        for (int l = 0; l < 4; ++l) {
            x = res[l].forward(x);
            const std::size_t h = x.dim(1), w = x.dim(2);
            x = tokens::to_chw(attn[l].forward(tokens::from_chw(x)), h, w);
            maps[l] = x;
            if (l < 3) x = down[l].forward(x);
        }
        return maps;
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        patchify.params(prefix + ".patchify", out);
        for (int l = 0; l < 4; ++l) {
            const std::string stage = prefix + ".stage" + std::to_string(l);
            res[l].params(stage + ".res", out);
            attn[l].params(stage + ".attn", out);
        }
        for (int l = 0; l < 3; ++l) {
            down[l].params(prefix + ".down" + std::to_string(l), out);
        }
    }
};

// Learnable queries refined over R pre-norm decoder blocks (self-attention,
// cross-attention to flattened f4 with sinusoidal positions on the keys,
// feed-forward). Output keeps shape [Q, D] for any input extent.
template <typename T>
struct PerceptionRefinedDecoder {
    struct Block {
        LayerNorm<T> ln1;
        Attention<T> self_attn;
        LayerNorm<T> ln2;
        Attention<T> cross_attn;
        LayerNorm<T> ln3;
        Mlp<T> mlp;
    };

    Tensor<T> queries;  // [Q, D]
    std::vector<Block> blocks;

    PerceptionRefinedDecoder() = default;
    PerceptionRefinedDecoder(const Config& cfg, Rng& rng) {
        queries = Tensor<T>::zeros({std::size_t(cfg.prompt_queries), std::size_t(cfg.prompt_dim)});
        rng.fill_gaussian(queries.mutable_values(), 0.02);
        queries.set_requires_grad(true);
        blocks.resize(cfg.prd_blocks);
        for (auto& b : blocks) {
            b.ln1 = LayerNorm<T>(cfg.prompt_dim);
            b.self_attn = Attention<T>(cfg.prompt_dim, cfg.prompt_dim, cfg.attn_heads, rng);
            b.ln2 = LayerNorm<T>(cfg.prompt_dim);
            b.cross_attn = Attention<T>(cfg.prompt_dim, cfg.enc_channels[3], cfg.attn_heads, rng);
            b.ln3 = LayerNorm<T>(cfg.prompt_dim);
            b.mlp = Mlp<T>(cfg.prompt_dim, cfg.prompt_dim * 4, rng);
        }
    }

    // attn_probs, when given, receives the final block's cross-attention maps
    // [heads, Q, tokens] (the Fig-6-style visualization surface).
    Tensor<T> forward(const Tensor<T>& f4, Tensor<T>* attn_probs = nullptr) const {
        const std::size_t h = f4.dim(1), w = f4.dim(2);
        Tensor<T> ctx = tokens::from_chw(f4);
        Tensor<T> pos = sinusoidal_2d<T>(h, w, ctx.dim(1));
        Tensor<T> x = queries;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const Block& b = blocks[i];
            Tensor<T> n1 = b.ln1.forward(x);
            x = numkit::add(x, b.self_attn.forward(n1, n1));
            const bool last = (i + 1 == blocks.size());
            x = numkit::add(x, b.cross_attn.forward(b.ln2.forward(x), ctx, Tensor<T>(), pos,
                                                    last ? attn_probs : nullptr));
            x = numkit::add(x, b.mlp.forward(b.ln3.forward(x)));
        }
        return x;
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".queries", queries);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string bp = prefix + ".block" + std::to_string(i);
            blocks[i].ln1.params(bp + ".ln1", out);
            blocks[i].self_attn.params(bp + ".self", out);
            blocks[i].ln2.params(bp + ".ln2", out);
            blocks[i].cross_attn.params(bp + ".cross", out);
            blocks[i].ln3.params(bp + ".ln3", out);
            blocks[i].mlp.params(bp + ".mlp", out);
        }
    }
};

// Residual conv stack mapping the pose map to one feature map per
// down-sampling block, shape-matched to that block's output.
template <typename T>
struct PoseAdapter {
    Conv2d<T> stem;  // 3 -> u0 at latent resolution (/4)
    std::array<ResBlock<T>, 3> res;
    std::array<Conv2d<T>, 3> head;
    std::array<Conv2d<T>, 2> down;
    std::array<int, 3> channels{};
    int latent_size = 0;

    PoseAdapter() = default;
    PoseAdapter(const Config& cfg, Rng& rng) {
        const auto& u = cfg.unet_channels;
        channels = u;
        latent_size = cfg.latent_size();
        stem = Conv2d<T>(3, u[0], 4, 4, 0, rng);
        for (int l = 0; l < 3; ++l) {
            res[l] = ResBlock<T>(u[l], u[l], cfg.gn_groups, rng);
            head[l] = Conv2d<T>(u[l], u[l], 3, 1, 1, rng);
        }
        down[0] = Conv2d<T>(u[0], u[1], 4, 2, 1, rng);
        down[1] = Conv2d<T>(u[1], u[2], 4, 2, 1, rng);
    }

    std::vector<Tensor<T>> forward(const Tensor<T>& pose_map) const {
        numkit::check(pose_map.rank() == 3 && pose_map.dim(0) == 3 &&
                          pose_map.dim(1) == std::size_t(latent_size * 4) &&
                          pose_map.dim(2) == std::size_t(latent_size * 4),
                      "pose adapter: map must be [3," + std::to_string(latent_size * 4) + "," +
                          std::to_string(latent_size * 4) + "], got " +
                          numkit::shape_str(pose_map.shape()));
        std::vector<Tensor<T>> pyramid;
        Tensor<T> x = stem.forward(pose_map);
        for (int l = 0; l < 3; ++l) {
            x = res[l].forward(x);
            pyramid.push_back(head[l].forward(x));
            if (l < 2) x = down[l].forward(x);
        }
        return pyramid;
    }

    // The DROPPED pose condition: every pyramid level exactly zero.
    std::vector<Tensor<T>> zero_pyramid() const {
        std::vector<Tensor<T>> pyramid;
        std::size_t extent = latent_size;
        for (int l = 0; l < 3; ++l) {
            pyramid.push_back(Tensor<T>::zeros({std::size_t(channels[l]), extent, extent}));
            extent /= 2;
        }
        return pyramid;
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        stem.params(prefix + ".stem", out);
        for (int l = 0; l < 3; ++l) {
            const std::string lp = prefix + ".level" + std::to_string(l);
            res[l].params(lp + ".res", out);
            head[l].params(lp + ".head", out);
        }
        down[0].params(prefix + ".down0", out);
        down[1].params(prefix + ".down1", out);
    }
};

}  // namespace cfld
