#pragma once

#include "cfld/nn.hpp"

// Latent codec standing in for the pretrained VAE: a deterministic
// autoencoder with downsample factor 4. Diffusion only ever sees codec
// latents; after pretraining the codec is frozen and latents are standardized
// by a measured scale so unit-variance noise matches the signal scale.

namespace cfld {

template <typename T>
struct LatentCodec {
    static constexpr int kFactor = 4;

    // encoder
    Conv2d<T> e_stem;   // 3 -> c/2 at full res
    Conv2d<T> e_down1;  // c/2 -> c, stride 2
    ResBlock<T> e_res1;
    Conv2d<T> e_down2;  // c -> 2c, stride 2
    ResBlock<T> e_res2;
    Conv2d<T> e_head;   // 2c -> latent channels

    // decoder
    Conv2d<T> d_stem;  // latent channels -> 2c
    ResBlock<T> d_res1;
    Conv2d<T> d_up1;  // 2c -> c (after nearest x2)
    ResBlock<T> d_res2;
    Conv2d<T> d_up2;  // c -> c/2 (after nearest x2)
    Conv2d<T> d_head;  // c/2 -> 3

    // measured std of raw latents over the pretraining pool; encode divides
    // by it, decode multiplies it back
    double latent_scale = 1.0;

    LatentCodec() = default;
    LatentCodec(int channels, int latent_channels, int gn_groups, Rng& rng) {
        const int half = channels / 2;
        e_stem = Conv2d<T>(3, half, 3, 1, 1, rng);
        e_down1 = Conv2d<T>(half, channels, 4, 2, 1, rng);
        e_res1 = ResBlock<T>(channels, channels, gn_groups, rng);
        e_down2 = Conv2d<T>(channels, 2 * channels, 4, 2, 1, rng);
        e_res2 = ResBlock<T>(2 * channels, 2 * channels, gn_groups, rng);
        e_head = Conv2d<T>(2 * channels, latent_channels, 3, 1, 1, rng);

        d_stem = Conv2d<T>(latent_channels, 2 * channels, 3, 1, 1, rng);
        d_res1 = ResBlock<T>(2 * channels, 2 * channels, gn_groups, rng);
        d_up1 = Conv2d<T>(2 * channels, channels, 3, 1, 1, rng);
        d_res2 = ResBlock<T>(channels, channels, gn_groups, rng);
        d_up2 = Conv2d<T>(channels, half, 3, 1, 1, rng);
        d_head = Conv2d<T>(half, 3, 3, 1, 1, rng);
    }

    // Raw (unstandardized) encoder output; used during codec pretraining and
    // for measuring the latent scale.
    Tensor<T> encode_raw(const Tensor<T>& img) const {
        numkit::check(img.rank() == 3 && img.dim(0) == 3,
                      "encode: image must be [3,H,W], got " + numkit::shape_str(img.shape()));
        numkit::check(img.dim(1) % kFactor == 0 && img.dim(2) % kFactor == 0,
                      "encode: extents " + numkit::shape_str(img.shape()) +
                          " not divisible by downsample factor " + std::to_string(kFactor));
        Tensor<T> h = numkit::silu(e_stem.forward(img));
        h = numkit::silu(e_down1.forward(h));
        h = e_res1.forward(h);
        h = numkit::silu(e_down2.forward(h));
        h = e_res2.forward(h);
        return e_head.forward(h);
    }

    Tensor<T> encode(const Tensor<T>& img) const {
        return numkit::mul_scalar(encode_raw(img), static_cast<T>(1.0 / latent_scale));
    }

    Tensor<T> decode(const Tensor<T>& z) const {
        return decode_raw(numkit::mul_scalar(z, static_cast<T>(latent_scale)));
    }

    Tensor<T> decode_raw(const Tensor<T>& z) const {
        Tensor<T> h = numkit::silu(d_stem.forward(z));
        h = d_res1.forward(h);
        h = numkit::silu(d_up1.forward(numkit::upsample_nearest2x(h)));
        h = d_res2.forward(h);
        h = numkit::silu(d_up2.forward(numkit::upsample_nearest2x(h)));
        return numkit::tanh_act(d_head.forward(h));  // output lives in (-1,1)
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        e_stem.params(prefix + ".e_stem", out);
        e_down1.params(prefix + ".e_down1", out);
        e_res1.params(prefix + ".e_res1", out);
        e_down2.params(prefix + ".e_down2", out);
        e_res2.params(prefix + ".e_res2", out);
        e_head.params(prefix + ".e_head", out);
        d_stem.params(prefix + ".d_stem", out);
        d_res1.params(prefix + ".d_res1", out);
        d_up1.params(prefix + ".d_up1", out);
        d_res2.params(prefix + ".d_res2", out);
        d_up2.params(prefix + ".d_up2", out);
        d_head.params(prefix + ".d_head", out);
    }
};

}  // namespace cfld
