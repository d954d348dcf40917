#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cfld {

// Every knob of the artifact. Values load from a key=value file, then CLI
// flags override. Unknown keys are hard errors.
struct Config {
    // data
    int image_size = 64;
    int train_pairs = 16;
    int test_pairs = 64;
    int codec_images = 256;

    // codec
    int latent_channels = 4;
    int codec_channels = 32;

    // conditioning
    std::array<int, 4> enc_channels = {32, 64, 128, 256};
    int prompt_dim = 128;    // D (= paper's C)
    int prompt_queries = 16;  // Q
    int prd_blocks = 4;      // R
    int hga_layers = 2;      // K
    int attn_heads = 4;

    // denoiser
    std::array<int, 3> unet_channels = {32, 64, 128};
    int temb_dim = 128;
    int gn_groups = 8;

    // diffusion
    int diffusion_steps = 1000;  // T
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int ddim_steps = 50;

    // training
    double lr = 1e-4;
    int warmup_steps = 100;
    int milestone_step = 2250;  // lr x0.1 afterwards
    int batch_size = 4;
    int eta_drop_percent = 20;
    int codec_steps = 2000;
    int backbone_steps = 2000;
    int train_steps = 3000;
    int checkpoint_every = 1000;
    int independent_drop = 0;  // optional independent source/pose dropout
    std::uint64_t seed = 1;

    // sampling
    double w_pose = 2.0;
    double w_app = 2.0;

    // Parse a key=value file ('#' comments); unknown keys throw.
    void load_file(const std::string& path);

    // Apply a single "key=value" override; unknown keys throw.
    void set(const std::string& key, const std::string& value);

    // Effective configuration, one key=value per line.
    std::string dump() const;

    // Derived extents.
    int latent_size() const { return image_size / 4; }

    void validate() const;
};

}  // namespace cfld
