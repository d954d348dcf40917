#pragma once

#include <string>

#include "numkit/tensor.hpp"

// 8-bit PNG in/out. Internal [-1,1] maps to bytes via round((v+1)/2*255).
// Writes are atomic (temp file + rename).

namespace cfld {

using numkit::Tensor;

// img is [3,H,W] (RGB) or [1,H,W] (grayscale), values in [-1,1].
void write_png(const std::string& path, const Tensor<float>& img);

// Returns [3,H,W] for color inputs, [1,H,W] for grayscale, values in [-1,1].
Tensor<float> read_png(const std::string& path);

// Downsample a [1,H,W] mask image ({-1,+1} after PNG read) to a binary
// latent-grid mask by strict block-min: a latent cell is editable (1) only if
// every covered pixel is inside the mask.
Tensor<float> mask_to_latent(const Tensor<float>& mask_image, std::size_t latent_h,
                             std::size_t latent_w);

}  // namespace cfld
