#include "pointdet/image.hpp"

#include "pointdet/error.hpp"
#include "pointdet/kernels.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace pointdet {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

unsigned char to_byte(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<unsigned char>(std::lround(clamped * 255.0));
}

} // namespace

Image read_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("failed to decode png: " + path);
    }

    png_init_io(png, file.get());
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    const png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<unsigned char> raw(static_cast<size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img = Image::filled(h, w);
    for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] / 255.0;
    return img;
}

void write_png(const Image& img, const std::string& path) {
    require(img.h > 0 && img.w > 0 && img.c == 3, "write_png: expects a non-empty RGB image");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("cannot write image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed to encode png: " + path);
    }

    png_init_io(png, file.get());
    // Fixed settings so identical pixels give identical files.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) row[static_cast<size_t>(x) * 3 + ch] = to_byte(img.at(y, x, ch));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& img, int oh, int ow) {
    require(oh > 0 && ow > 0, "resize_bilinear: target size must be positive");
    Image out = Image::filled(oh, ow);
    const double sy = static_cast<double>(img.h) / oh;
    const double sx = static_cast<double>(img.w) / ow;
    std::vector<double> pts(static_cast<size_t>(ow) * 2);
    std::vector<double> row(static_cast<size_t>(ow) * 3);
    for (int y = 0; y < oh; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < ow; ++x) {
            pts[static_cast<size_t>(x) * 2] = (x + 0.5) * sx - 0.5;
            pts[static_cast<size_t>(x) * 2 + 1] = src_y;
        }
        kernels::bilinear_gather(img.pix.data(), img.h, img.w, 3, pts.data(), ow, row.data());
        std::copy(row.begin(), row.end(),
                  out.pix.begin() + static_cast<size_t>(y) * ow * 3);
    }
    return out;
}

Image box_downsample(const Image& img, int factor) {
    require(factor >= 1 && img.h % factor == 0 && img.w % factor == 0,
            "box_downsample: size must be divisible by the factor");
    if (factor == 1) return img;
    const int oh = img.h / factor, ow = img.w / factor;
    Image out = Image::filled(oh, ow);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy) {
                    for (int dx = 0; dx < factor; ++dx) {
                        acc += img.at(y * factor + dy, x * factor + dx, ch);
                    }
                }
                out.at(y, x, ch) = acc * inv;
            }
        }
    }
    return out;
}

Image pad_or_crop(const Image& img, int oh, int ow) {
    if (oh == img.h && ow == img.w) return img;
    Image out = Image::filled(oh, ow);
    const int copy_h = std::min(oh, img.h), copy_w = std::min(ow, img.w);
    for (int y = 0; y < copy_h; ++y) {
        for (int x = 0; x < copy_w; ++x) {
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(y, x, ch);
        }
    }
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out = Image::filled(img.h, img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
        }
    }
    return out;
}

Image flip_vertical(const Image& img) {
    Image out = Image::filled(img.h, img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(img.h - 1 - y, x, ch);
        }
    }
    return out;
}

void draw_disc(Image& img, double cx, double cy, double radius, const double rgb[3]) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2) {
                for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
            }
        }
    }
}

void draw_ring(Image& img, double cx, double cy, double radius, const double rgb[3]) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius + 1)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (std::abs(d - radius) <= 0.6) {
                for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
            }
        }
    }
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, const double rgb[3]) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * dx));
        const int y = static_cast<int>(std::lround(y0 + t * dy));
        if (x >= 0 && x < img.w && y >= 0 && y < img.h) {
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
        }
    }
}

const double* class_color(int class_id) {
    static const double palette[8][3] = {
        {0.90, 0.20, 0.20}, {0.15, 0.75, 0.25}, {0.20, 0.35, 0.95}, {0.95, 0.80, 0.10},
        {0.80, 0.25, 0.85}, {0.10, 0.80, 0.80}, {0.95, 0.55, 0.15}, {0.55, 0.35, 0.20},
    };
    return palette[((class_id % 8) + 8) % 8];
}

} // namespace pointdet
