#pragma once

#include "numkit/tensor.hpp"

// Pixel-level reconstruction metrics (PSNR, SSIM). FID and LPIPS need
// pretrained feature networks and are deliberately not provided.

namespace cfld {

using numkit::Tensor;

inline constexpr double kPsnrCap = 99.0;  // identical images report 99 dB

// 10*log10(max_val^2 / MSE) over all elements; images in [-1,1] use max_val 2.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double max_val = 2.0);

// Mean SSIM over valid (unpadded) windows of the channel-mean grayscale,
// Gaussian window sigma 1.5, k1=0.01, k2=0.03, L = max_val.
double ssim(const Tensor<float>& a, const Tensor<float>& b, int window = 11, double k1 = 0.01,
            double k2 = 0.03, double max_val = 2.0);

}  // namespace cfld
