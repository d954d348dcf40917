#include "cfld/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace cfld {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(float v) {
    const double u = std::round((double(v) + 1.0) / 2.0 * 255.0);
    return static_cast<unsigned char>(std::min(255.0, std::max(0.0, u)));
}

float from_byte(unsigned char b) { return static_cast<float>(b / 255.0 * 2.0 - 1.0); }

}  // namespace

void write_png(const std::string& path, const Tensor<float>& img) {
    numkit::check(img.rank() == 3 && (img.dim(0) == 3 || img.dim(0) == 1),
                  "write_png: image must be [3,H,W] or [1,H,W], got " +
                      numkit::shape_str(img.shape()));
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const std::string tmp = path + ".tmp";
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + tmp);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(w * c);
    const float* p = img.data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                row[x * c + ch] = to_byte(p[(ch * h + y) * w + x]);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();

    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("write_png: rename to " + path + " failed");
    }
}

Tensor<float> read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error reading " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    // normalize everything to 8-bit RGB or gray
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t channels = png_get_channels(png, info);
    numkit::check(channels == 1 || channels == 3,
                  "read_png: unsupported channel count " + std::to_string(channels) + " in " +
                      path);

    std::vector<unsigned char> raw(h * w * channels);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = raw.data() + y * w * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> out = Tensor<float>::zeros({channels, h, w});
    float* p = out.mutable_data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < channels; ++ch) {
                p[(ch * h + y) * w + x] = from_byte(raw[(y * w + x) * channels + ch]);
            }
        }
    }
    return out;
}

Tensor<float> mask_to_latent(const Tensor<float>& mask_image, std::size_t latent_h,
                             std::size_t latent_w) {
    numkit::check(mask_image.rank() == 3 && mask_image.dim(0) == 1,
                  "mask: expected single-channel image, got " +
                      numkit::shape_str(mask_image.shape()));
    const std::size_t h = mask_image.dim(1), w = mask_image.dim(2);
    numkit::check(h % latent_h == 0 && w % latent_w == 0,
                  "mask: image extents " + numkit::shape_str(mask_image.shape()) +
                      " not divisible by latent grid " + std::to_string(latent_h) + "x" +
                      std::to_string(latent_w));
    const std::size_t fy = h / latent_h, fx = w / latent_w;
    Tensor<float> out = Tensor<float>::zeros({latent_h, latent_w});
    float* po = out.mutable_data();
    const float* pm = mask_image.data();
    for (std::size_t ly = 0; ly < latent_h; ++ly) {
        for (std::size_t lx = 0; lx < latent_w; ++lx) {
            bool all_inside = true;
            for (std::size_t y = ly * fy; y < (ly + 1) * fy && all_inside; ++y) {
                for (std::size_t x = lx * fx; x < (lx + 1) * fx; ++x) {
                    if (pm[y * w + x] < 0.0f) {  // outside: byte 0 maps to -1
                        all_inside = false;
                        break;
                    }
                }
            }
            po[ly * latent_w + lx] = all_inside ? 1.0f : 0.0f;
        }
    }
    return out;
}

}  // namespace cfld
