#pragma once

#include <array>
#include <optional>
#include <vector>

#include "cfld/config.hpp"
#include "cfld/nn.hpp"

// The UNet eps predictor. Down-sampling blocks keep standard cross-attention
// to the coarse prompt and receive additive pose features at their ends; the
// up-sampling blocks carry hybrid-granularity attention, whose queries are
// biased by the fine-grained appearance encoding of the matching source map.

namespace cfld {

// res block + (self-attn, cross-attn, mlp) over spatial tokens. The optional
// query bias is the HGA term B; at zero (or absent) this is a plain
// cross-attention block.
template <typename T>
struct UnetLevel {
    ResBlock<T> res;
    LayerNorm<T> ln_self;
    Attention<T> self_attn;
    LayerNorm<T> ln_cross;
    Attention<T> cross_attn;
    LayerNorm<T> ln_mlp;
    Mlp<T> mlp;

    UnetLevel() = default;
    UnetLevel(int in_ch, int ch, int prompt_dim, const Config& cfg, Rng& rng)
        : res(in_ch, ch, cfg.gn_groups, rng, cfg.temb_dim),
          ln_self(ch),
          self_attn(ch, ch, cfg.attn_heads, rng),
          ln_cross(ch),
          cross_attn(ch, prompt_dim, cfg.attn_heads, rng),
          ln_mlp(ch),
          mlp(ch, ch * 4, rng) {}

    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& temb, const Tensor<T>& prompt,
                      const Tensor<T>& query_bias = Tensor<T>()) const {
        Tensor<T> h = res.forward(x, temb);
        const std::size_t hh = h.dim(1), ww = h.dim(2);
        Tensor<T> tok = tokens::from_chw(h);
        Tensor<T> n1 = ln_self.forward(tok);
        tok = numkit::add(tok, self_attn.forward(n1, n1));
        tok = numkit::add(tok, cross_attn.forward(ln_cross.forward(tok), prompt, query_bias));
        tok = numkit::add(tok, mlp.forward(ln_mlp.forward(tok)));
        return tokens::to_chw(tok, hh, ww);
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        res.params(prefix + ".res", out);
        ln_self.params(prefix + ".ln_self", out);
        self_attn.params(prefix + ".self", out);
        ln_cross.params(prefix + ".ln_cross", out);
        cross_attn.params(prefix + ".cross", out);
        ln_mlp.params(prefix + ".ln_mlp", out);
        mlp.params(prefix + ".mlp", out);
    }
};

// Fine-grained appearance encoder phi_A for one up-sampling scale:
// zero conv -> K transformer layers -> zero conv. Both gates start at exactly
// zero, so a fresh block contributes B = 0.
template <typename T>
struct HgaAppearanceEncoder {
    Conv2d<T> zero_in;
    std::vector<TransformerLayer<T>> layers;
    Conv2d<T> zero_out;

    HgaAppearanceEncoder() = default;
    HgaAppearanceEncoder(int src_ch, int ch, const Config& cfg, Rng& rng) {
        zero_in = Conv2d<T>::zero(src_ch, ch);
        layers.resize(cfg.hga_layers);
        for (auto& l : layers) l = TransformerLayer<T>(ch, cfg.attn_heads, rng);
        zero_out = Conv2d<T>::zero(ch, ch);
    }

    // f_l resampled to the up block's grid, encoded, and returned token-major
    // [h*w, ch] so it adds to the projected queries before the head split.
    Tensor<T> bias(const Tensor<T>& f_l, std::size_t h, std::size_t w) const {
        Tensor<T> x = numkit::resize_bilinear(f_l, h, w);
        x = zero_in.forward(x);
        Tensor<T> tok = tokens::from_chw(x);
        for (const auto& l : layers) tok = l.forward(tok);
        x = zero_out.forward(tokens::to_chw(tok, h, w));
        return tokens::from_chw(x);
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        zero_in.params(prefix + ".zero_in", out);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].params(prefix + ".layer" + std::to_string(i), out);
        }
        zero_out.params(prefix + ".zero_out", out);
    }
};

// Probe for wiring tests and visualization: filled when passed to forward.
template <typename T>
struct UnetProbe {
    std::vector<Tensor<T>> down_outputs;  // value clones after pose addition
};

template <typename T>
struct UNet {
    Linear<T> temb_fc1, temb_fc2;
    Conv2d<T> conv_in;
    std::array<UnetLevel<T>, 3> down;       // scales /1, /2, /4 of the latent grid
    std::array<Conv2d<T>, 2> downsample;
    ResBlock<T> mid_res1;
    LayerNorm<T> mid_ln;
    Attention<T> mid_attn;
    ResBlock<T> mid_res2;
    std::array<UnetLevel<T>, 3> up;          // coarse -> fine
    std::array<Conv2d<T>, 2> upsample;
    GroupNorm<T> out_gn;
    Conv2d<T> conv_out;

    int temb_dim = 0;

    UNet() = default;
    UNet(const Config& cfg, Rng& rng) : temb_dim(cfg.temb_dim) {
        const auto& u = cfg.unet_channels;
        const int d = cfg.prompt_dim;
        temb_fc1 = Linear<T>(cfg.temb_dim, cfg.temb_dim, rng);
        temb_fc2 = Linear<T>(cfg.temb_dim, cfg.temb_dim, rng);
        conv_in = Conv2d<T>(cfg.latent_channels, u[0], 3, 1, 1, rng);
        down[0] = UnetLevel<T>(u[0], u[0], d, cfg, rng);
        down[1] = UnetLevel<T>(u[1], u[1], d, cfg, rng);
        down[2] = UnetLevel<T>(u[2], u[2], d, cfg, rng);
        downsample[0] = Conv2d<T>(u[0], u[1], 4, 2, 1, rng);
        downsample[1] = Conv2d<T>(u[1], u[2], 4, 2, 1, rng);
        mid_res1 = ResBlock<T>(u[2], u[2], cfg.gn_groups, rng, cfg.temb_dim);
        mid_ln = LayerNorm<T>(u[2]);
        mid_attn = Attention<T>(u[2], u[2], cfg.attn_heads, rng);
        mid_res2 = ResBlock<T>(u[2], u[2], cfg.gn_groups, rng, cfg.temb_dim);
        up[0] = UnetLevel<T>(2 * u[2], u[2], d, cfg, rng);
        up[1] = UnetLevel<T>(2 * u[1], u[1], d, cfg, rng);
        up[2] = UnetLevel<T>(2 * u[0], u[0], d, cfg, rng);
        upsample[0] = Conv2d<T>(u[2], u[1], 3, 1, 1, rng);
        upsample[1] = Conv2d<T>(u[1], u[0], 3, 1, 1, rng);
        out_gn = GroupNorm<T>(u[0], cfg.gn_groups);
        conv_out = Conv2d<T>(u[0], cfg.latent_channels, 3, 1, 1, rng);
    }

    // pose_pyramid is one map per down level (possibly all zero); hga_biases
    // holds the per-up-scale query bias B (undefined tensors mean B absent,
    // i.e. the appearance condition is dropped).
    Tensor<T> forward(const Tensor<T>& z_t, int t, const Tensor<T>& prompt,
                      const std::vector<Tensor<T>>& pose_pyramid,
                      const std::array<Tensor<T>, 3>& hga_biases,
                      UnetProbe<T>* probe = nullptr) const {
        numkit::check(pose_pyramid.size() == 3, "unet: pose pyramid must have 3 levels");
        Tensor<T> temb = temb_fc2.forward(
            numkit::silu(temb_fc1.forward(numkit::reshape(
                sinusoidal_embedding<T>(double(t), temb_dim), {1, std::size_t(temb_dim)}))));
        temb = numkit::reshape(temb, {std::size_t(temb_dim)});

        Tensor<T> x = conv_in.forward(z_t);
        std::array<Tensor<T>, 3> skips;
        for (int l = 0; l < 3; ++l) {
            x = down[l].forward(x, temb, prompt);
            // pose features join at the end of each down block
            x = numkit::add(x, pose_pyramid[l]);
            skips[l] = x;
            if (probe) probe->down_outputs.push_back(x.clone());
            if (l < 2) x = downsample[l].forward(x);
        }

        x = mid_res1.forward(x, temb);
        {
            const std::size_t hh = x.dim(1), ww = x.dim(2);
            Tensor<T> tok = tokens::from_chw(x);
            Tensor<T> n = mid_ln.forward(tok);
            tok = numkit::add(tok, mid_attn.forward(n, n));
            x = tokens::to_chw(tok, hh, ww);
        }
        x = mid_res2.forward(x, temb);

        for (int l = 0; l < 3; ++l) {
            x = numkit::concat0(x, skips[2 - l]);
            x = up[l].forward(x, temb, prompt, hga_biases[l]);
            if (l < 2) x = upsample[l].forward(numkit::upsample_nearest2x(x));
        }
        return conv_out.forward(numkit::silu(out_gn.forward(x)));
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        temb_fc1.params(prefix + ".temb_fc1", out);
        temb_fc2.params(prefix + ".temb_fc2", out);
        conv_in.params(prefix + ".conv_in", out);
        for (int l = 0; l < 3; ++l) down[l].params(prefix + ".down" + std::to_string(l), out);
        downsample[0].params(prefix + ".downsample0", out);
        downsample[1].params(prefix + ".downsample1", out);
        mid_res1.params(prefix + ".mid_res1", out);
        mid_ln.params(prefix + ".mid_ln", out);
        mid_attn.params(prefix + ".mid_attn", out);
        mid_res2.params(prefix + ".mid_res2", out);
        for (int l = 0; l < 3; ++l) up[l].params(prefix + ".up" + std::to_string(l), out);
        upsample[0].params(prefix + ".upsample0", out);
        upsample[1].params(prefix + ".upsample1", out);
        out_gn.params(prefix + ".out_gn", out);
        conv_out.params(prefix + ".conv_out", out);
    }
};

}  // namespace cfld
