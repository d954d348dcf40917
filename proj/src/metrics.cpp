#include "cfld/metrics.hpp"

#include <cmath>
#include <vector>

namespace cfld {

double psnr(const Tensor<float>& a, const Tensor<float>& b, double max_val) {
    numkit::check(a.shape() == b.shape(), "psnr: shape mismatch " + numkit::shape_str(a.shape()) +
                                              " vs " + numkit::shape_str(b.shape()));
    const float* pa = a.data();
    const float* pb = b.data();
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(pa[i]) - double(pb[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

namespace {

std::vector<double> grayscale(const Tensor<float>& img) {
    const std::size_t c = img.dim(0), hw = img.dim(1) * img.dim(2);
    std::vector<double> g(hw, 0.0);
    const float* p = img.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i) g[i] += p[ch * hw + i];
    }
    for (double& v : g) v /= double(c);
    return g;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(window);
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable valid-region Gaussian filter: [h,w] -> [h-win+1, w-win+1]
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
    const std::size_t win = k.size();
    const std::size_t ow = w - win + 1, oh = h - win + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < win; ++i) acc += img[y * w + x + i] * k[i];
            rows[y * ow + x] = acc;
        }
    }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < win; ++i) acc += rows[(y + i) * ow + x] * k[i];
            out[y * ow + x] = acc;
        }
    }
    return out;
}

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b, int window, double k1, double k2,
            double max_val) {
    numkit::check(a.shape() == b.shape(), "ssim: shape mismatch " + numkit::shape_str(a.shape()) +
                                              " vs " + numkit::shape_str(b.shape()));
    numkit::check(a.rank() == 3, "ssim: expected [C,H,W] images");
    const std::size_t h = a.dim(1), w = a.dim(2);
    numkit::check(h >= std::size_t(window) && w >= std::size_t(window),
                  "ssim: image " + numkit::shape_str(a.shape()) + " smaller than window " +
                      std::to_string(window));

    const std::vector<double> x = grayscale(a);
    const std::vector<double> y = grayscale(b);
    const std::vector<double> kern = gaussian_kernel(window, 1.5);

    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mu_x = filter_valid(x, h, w, kern);
    const auto mu_y = filter_valid(y, h, w, kern);
    const auto m_xx = filter_valid(xx, h, w, kern);
    const auto m_yy = filter_valid(yy, h, w, kern);
    const auto m_xy = filter_valid(xy, h, w, kern);

    const double c1 = (k1 * max_val) * (k1 * max_val);
    const double c2 = (k2 * max_val) * (k2 * max_val);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
        const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
        const double cov = m_xy[i] - mu_x[i] * mu_y[i];
        total += ((2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2));
    }
    return total / double(mu_x.size());
}

}  // namespace cfld
