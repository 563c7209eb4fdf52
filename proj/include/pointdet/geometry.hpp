#pragma once

#include <vector>

// Coordinate and sampling arithmetic shared by the model and the tests:
// proposal grids, image<->feature-level transforms, bilinear reads with
// border replication, and the concentric-view crop geometry.

namespace pointdet::geometry {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct ProposalSet {
    std::vector<Point> initial;   // the pre-set grid, row-major (y outer, x inner)
    std::vector<Point> deformed;  // empty until apply_deformation fills it
    double interval = 0.0;
};

// One feature map at stride 2^level_index, stored HWC.
struct PyramidLevel {
    int level_index = 2;
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> data;

    double stride() const { return static_cast<double>(1 << level_index); }
    double at(int y, int x, int ch) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

// Normalized center-crop window [lo, hi) with its matching upsample factor;
// hi - lo = 1 / upsample_factor and lo + hi = 1.
struct CropLimits {
    double lo = 0.0;
    double hi = 1.0;
    int upsample_factor = 1;
};

// Cell-center grid: positions interval/2 + a*interval strictly inside the
// image, ordered row-major (y outer, x inner).
ProposalSet generate_grid_proposals(int height, int width, double interval);

// Half-pixel-center convention: ((v + 0.5) / stride - 0.5) per axis, so a
// pixel center maps onto the corresponding feature-cell center.
Point image_to_feature_coords(const Point& p, double stride);

// Bilinear read of every channel at image point p; out-of-range neighbor
// indices clamp to the border (replication). Exact on integral feature
// coordinates.
std::vector<double> bilinear_sample(const PyramidLevel& level, const Point& p);

// Analytic d(sum_c weight_c * sample_c)/dp for the read above; weights has
// one entry per channel (use all-ones for the plain Jacobian row sum).
Point bilinear_sample_point_grad(const PyramidLevel& level, const Point& p,
                                 const std::vector<double>& weights);

// deformed[i] = initial[i] + offsets[i]; coordinates are never clamped.
ProposalSet apply_deformation(const ProposalSet& s, const std::vector<Point>& offsets);

// Center-crop window of the k-th of K concentric views (1 <= k < K):
// lo = (2^{K-k}-1)/2^{K-k+1}, hi = (2^{K-k}+1)/2^{K-k+1}, factor 2^{K-k}.
CropLimits mfov_crop_limits(int K, int k);

// Integer window [offset, offset+size) realizing limits on an axis of n
// cells; errors unless n is divisible by 2 * upsample_factor.
struct CropWindow {
    int offset = 0;
    int size = 0;
};
CropWindow crop_window(int n, const CropLimits& limits);

PyramidLevel crop_center(const PyramidLevel& level, const CropLimits& limits);

} // namespace pointdet::geometry
