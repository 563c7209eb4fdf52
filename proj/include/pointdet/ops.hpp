#pragma once

#include "pointdet/rng.hpp"
#include "pointdet/tensor.hpp"

#include <vector>

// Differentiable ops. Feature maps are HWC {h, w, c}; per-point feature rows
// are {m, c}; linear weights are {in, out}; conv weights are {kh, kw, cin, cout}
// flattened so row (ky*kw+kx)*cin+ci lines up with the im2col column layout.

namespace pointdet::ag {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double alpha);

// x {..., c} plus bias {c} broadcast over leading dims.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// a {m, k} @ b {k, n} -> {m, n}
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// x {h, w, cin}, w {kh, kw, cin, cout}, bias {cout}; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);

// Stride-2 2x2 transposed conv: {h, w, cin} -> {2h, 2w, cout}.
Tensor conv_transpose2d_k2s2(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor upsample_nearest(const Tensor& x, int factor);

// Half-pixel-center bilinear upsample with border replication.
Tensor upsample_bilinear(const Tensor& x, int factor);

// Spatial crop: rows [y0, y0+oh), cols [x0, x0+ow), all channels.
Tensor slice_spatial(const Tensor& x, int y0, int x0, int oh, int ow);

Tensor concat_channels(const std::vector<Tensor>& parts);  // {h, w, c_i}
Tensor concat_cols(const std::vector<Tensor>& parts);      // {m, c_i}
Tensor concat_rows(const std::vector<Tensor>& parts);      // {m_i, c}

Tensor rows_select(const Tensor& x, const std::vector<int>& rows);

// Bilinear read of an HWC level at image-space points {m, 2} (x, y order).
// Feature coords are ((v + 0.5) / stride - 0.5); border cells replicate.
// Differentiable w.r.t. the level and the points.
Tensor sample_level(const Tensor& level, const Tensor& pts, double stride);

Tensor sum_all(const Tensor& x);

// Per-row weighted cross entropy over logits {m, c}:
//   sum_i weights[i] * -log softmax(logits[i])[targets[i]] / norm
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<double>& weights, double norm);

// Plain (non-tape) row-wise softmax of {m, c} values.
std::vector<double> row_softmax(const Tensor& logits);

} // namespace pointdet::ag
