#pragma once

#include <string>
#include <vector>

// RGB raster in double [0, 1], HWC. PNG I/O is 8-bit; reads expand gray or
// palette to RGB and drop alpha.

namespace pointdet {

struct Image {
    int h = 0;
    int w = 0;
    int c = 3;
    std::vector<double> pix;

    static Image filled(int h, int w, double value = 0.0) {
        Image img;
        img.h = h;
        img.w = w;
        img.pix.assign(static_cast<size_t>(h) * w * 3, value);
        return img;
    }
    double& at(int y, int x, int ch) { return pix[(static_cast<size_t>(y) * w + x) * 3 + ch]; }
    double at(int y, int x, int ch) const {
        return pix[(static_cast<size_t>(y) * w + x) * 3 + ch];
    }
};

Image read_png(const std::string& path);
void write_png(const Image& img, const std::string& path);

// Half-pixel-center bilinear resample to (oh, ow) with border replication.
Image resize_bilinear(const Image& img, int oh, int ow);

// Mean over factor x factor blocks; requires divisibility.
Image box_downsample(const Image& img, int factor);

// Grows to (oh, ow) by zero-filling bottom/right; crops instead when smaller.
Image pad_or_crop(const Image& img, int oh, int ow);

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

// Filled disc, clipped to the frame; rgb in [0, 1].
void draw_disc(Image& img, double cx, double cy, double radius, const double rgb[3]);

// One-pixel-wide circle outline, clipped to the frame.
void draw_ring(Image& img, double cx, double cy, double radius, const double rgb[3]);

void draw_line(Image& img, double x0, double y0, double x1, double y1, const double rgb[3]);

// Stable per-class marker palette (cycles after 8 classes).
const double* class_color(int class_id);

} // namespace pointdet
