#include "pointdet/geometry.hpp"

#include "pointdet/error.hpp"
#include "pointdet/kernels.hpp"

#include <cmath>
#include <string>

namespace pointdet::geometry {

ProposalSet generate_grid_proposals(int height, int width, double interval) {
    require(height > 0 && width > 0 && interval > 0,
            "generate_grid_proposals: dimensions and interval must be positive");
    ProposalSet set;
    set.interval = interval;
    for (double y = interval / 2.0; y < static_cast<double>(height); y += interval) {
        for (double x = interval / 2.0; x < static_cast<double>(width); x += interval) {
            set.initial.push_back({x, y});
        }
    }
    return set;
}

Point image_to_feature_coords(const Point& p, double stride) {
    return {(p.x + 0.5) / stride - 0.5, (p.y + 0.5) / stride - 0.5};
}

std::vector<double> bilinear_sample(const PyramidLevel& level, const Point& p) {
    const Point fp = image_to_feature_coords(p, level.stride());
    std::vector<double> out(static_cast<size_t>(level.c));
    const double pt[2] = {fp.x, fp.y};
    kernels::bilinear_gather(level.data.data(), level.h, level.w, level.c, pt, 1, out.data());
    return out;
}

Point bilinear_sample_point_grad(const PyramidLevel& level, const Point& p,
                                 const std::vector<double>& weights) {
    require(static_cast<int>(weights.size()) == level.c,
            "bilinear_sample_point_grad: one weight per channel");
    const Point fp = image_to_feature_coords(p, level.stride());
    const double pt[2] = {fp.x, fp.y};
    double dpt[2] = {0.0, 0.0};
    kernels::bilinear_coord_grad(level.data.data(), level.h, level.w, level.c, pt, 1,
                                 weights.data(), dpt);
    // Chain through the affine image->feature transform.
    const double inv = 1.0 / level.stride();
    return {dpt[0] * inv, dpt[1] * inv};
}

ProposalSet apply_deformation(const ProposalSet& s, const std::vector<Point>& offsets) {
    require(offsets.size() == s.initial.size(),
            "apply_deformation: offsets count must match proposal count");
    ProposalSet out = s;
    out.deformed.resize(s.initial.size());
    for (size_t i = 0; i < s.initial.size(); ++i) {
        out.deformed[i] = {s.initial[i].x + offsets[i].x, s.initial[i].y + offsets[i].y};
    }
    return out;
}

CropLimits mfov_crop_limits(int K, int k) {
    require(k >= 1 && k < K, "mfov_crop_limits: requires 1 <= k < K");
    const double pow_kk = static_cast<double>(1 << (K - k));      // 2^(K-k)
    const double pow_kk1 = static_cast<double>(1 << (K - k + 1)); // 2^(K-k+1)
    CropLimits limits;
    limits.lo = (pow_kk - 1.0) / pow_kk1;
    limits.hi = (pow_kk + 1.0) / pow_kk1;
    limits.upsample_factor = 1 << (K - k);
    return limits;
}

CropWindow crop_window(int n, const CropLimits& limits) {
    if (limits.upsample_factor == 1) return {0, n};  // degenerate full crop
    const int divisor = 2 * limits.upsample_factor;
    if (n % divisor != 0) {
        fail_validation("crop_center: size " + std::to_string(n) +
                        " must be divisible by " + std::to_string(divisor) +
                        " (2 * upsample_factor)");
    }
    CropWindow window;
    window.size = n / limits.upsample_factor;
    window.offset = static_cast<int>(std::lround(limits.lo * n));
    return window;
}

PyramidLevel crop_center(const PyramidLevel& level, const CropLimits& limits) {
    const CropWindow wy = crop_window(level.h, limits);
    const CropWindow wx = crop_window(level.w, limits);
    PyramidLevel out;
    out.level_index = level.level_index;
    out.h = wy.size;
    out.w = wx.size;
    out.c = level.c;
    out.data.resize(static_cast<size_t>(out.h) * out.w * out.c);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            for (int ch = 0; ch < out.c; ++ch) {
                out.data[(static_cast<size_t>(y) * out.w + x) * out.c + ch] =
                    level.at(wy.offset + y, wx.offset + x, ch);
            }
        }
    }
    return out;
}

} // namespace pointdet::geometry
