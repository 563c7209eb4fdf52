#include "pointdet/ops.hpp"

#include "pointdet/error.hpp"
#include "pointdet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pointdet::ag {

namespace {

namespace k = pointdet::kernels;

bool track(const std::initializer_list<Tensor>& parents) {
    if (!grad_enabled()) return false;
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

Tensor result(std::vector<int> shape, std::initializer_list<Tensor> parents) {
    auto node = make_tensor(std::move(shape));
    if (track(parents)) {
        node->requires_grad = true;
        node->parents.assign(parents.begin(), parents.end());
    }
    return node;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a->shape == b->shape; }

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), "add: shape mismatch");
    auto out = result(a->shape, {a, b});
    k::add(a->data(), b->data(), out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [a, b](Node& self) {
            if (a->requires_grad) k::axpy(1.0, self.grad.data(), a->grad_data(), self.size());
            if (b->requires_grad) k::axpy(1.0, self.grad.data(), b->grad_data(), self.size());
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), "sub: shape mismatch");
    auto out = result(a->shape, {a, b});
    k::sub(a->data(), b->data(), out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [a, b](Node& self) {
            if (a->requires_grad) k::axpy(1.0, self.grad.data(), a->grad_data(), self.size());
            if (b->requires_grad) k::axpy(-1.0, self.grad.data(), b->grad_data(), self.size());
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(same_shape(a, b), "mul: shape mismatch");
    auto out = result(a->shape, {a, b});
    k::mul(a->data(), b->data(), out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [a, b](Node& self) {
            const size_t n = self.size();
            std::vector<double> tmp(n);
            if (a->requires_grad) {
                k::mul(self.grad.data(), b->data(), tmp.data(), n);
                k::axpy(1.0, tmp.data(), a->grad_data(), n);
            }
            if (b->requires_grad) {
                k::mul(self.grad.data(), a->data(), tmp.data(), n);
                k::axpy(1.0, tmp.data(), b->grad_data(), n);
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& x, double alpha) {
    auto out = result(x->shape, {x});
    k::scale(x->data(), alpha, out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [x, alpha](Node& self) {
            k::axpy(alpha, self.grad.data(), x->grad_data(), self.size());
        };
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const int c = bias->dim(0);
    require(bias->shape.size() == 1 && x->shape.back() == c, "add_bias: channel mismatch");
    auto out = result(x->shape, {x, bias});
    const size_t rows = x->size() / static_cast<size_t>(c);
    for (size_t r = 0; r < rows; ++r) {
        k::add(x->data() + r * c, bias->data(), out->data() + r * c, static_cast<size_t>(c));
    }
    if (out->requires_grad) {
        out->backward_fn = [x, bias, rows, c](Node& self) {
            if (x->requires_grad) k::axpy(1.0, self.grad.data(), x->grad_data(), self.size());
            if (bias->requires_grad) {
                double* db = bias->grad_data();
                for (size_t r = 0; r < rows; ++r) {
                    k::axpy(1.0, self.grad.data() + r * c, db, static_cast<size_t>(c));
                }
            }
        };
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a->shape.size() == 2 && b->shape.size() == 2 && a->dim(1) == b->dim(0),
            "matmul: incompatible shapes");
    const int m = a->dim(0), kk = a->dim(1), n = b->dim(1);
    auto out = result({m, n}, {a, b});
    k::gemm(false, false, m, n, kk, a->data(), b->data(), out->data(), false);
    if (out->requires_grad) {
        out->backward_fn = [a, b, m, kk, n](Node& self) {
            if (a->requires_grad) {
                k::gemm(false, true, m, kk, n, self.grad.data(), b->data(), a->grad_data(), true);
            }
            if (b->requires_grad) {
                k::gemm(true, false, kk, n, m, a->data(), self.grad.data(), b->grad_data(), true);
            }
        };
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_bias(matmul(x, w), b);
}

Tensor relu(const Tensor& x) {
    auto out = result(x->shape, {x});
    k::relu(x->data(), out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [x](Node& self) {
            k::relu_backward(x->data(), self.grad.data(), x->grad_data(), self.size());
        };
    }
    return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    require(p < 1.0, "dropout: probability must be < 1");
    auto mask = std::make_shared<std::vector<double>>(x->size());
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& mv : *mask) mv = rng.bernoulli(p) ? 0.0 : keep_scale;
    auto out = result(x->shape, {x});
    k::mul(x->data(), mask->data(), out->data(), out->size());
    if (out->requires_grad) {
        out->backward_fn = [x, mask](Node& self) {
            std::vector<double> tmp(self.size());
            k::mul(self.grad.data(), mask->data(), tmp.data(), self.size());
            k::axpy(1.0, tmp.data(), x->grad_data(), self.size());
        };
    }
    return out;
}

namespace {

// Unpacks {h,w,cin} into rows of receptive-field patches, one row per output
// pixel, columns laid out (ky, kx, ci). Out-of-bounds taps are zero.
void im2col(const double* x, int h, int w, int cin, int kh, int kw, int stride,
            int pad, int h_out, int w_out, double* col) {
    const int kcin = kh * kw * cin;
    for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
            double* row = col + (static_cast<size_t>(oy) * w_out + ox) * kcin;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    double* seg = row + (ky * kw + kx) * cin;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
                        std::memset(seg, 0, sizeof(double) * static_cast<size_t>(cin));
                    } else {
                        std::memcpy(seg, x + (static_cast<size_t>(iy) * w + ix) * cin,
                                    sizeof(double) * static_cast<size_t>(cin));
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int h, int w, int cin, int kh, int kw, int stride,
                int pad, int h_out, int w_out, double* dx) {
    const int kcin = kh * kw * cin;
    for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
            const double* row = col + (static_cast<size_t>(oy) * w_out + ox) * kcin;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= w) continue;
                    k::add(row + (ky * kw + kx) * cin,
                           dx + (static_cast<size_t>(iy) * w + ix) * cin,
                           dx + (static_cast<size_t>(iy) * w + ix) * cin,
                           static_cast<size_t>(cin));
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    require(x->shape.size() == 3 && w->shape.size() == 4, "conv2d: bad ranks");
    const int h = x->dim(0), wd = x->dim(1), cin = x->dim(2);
    const int kh = w->dim(0), kw = w->dim(1), cout = w->dim(3);
    require(w->dim(2) == cin, "conv2d: input channel mismatch");
    const int h_out = (h + 2 * pad - kh) / stride + 1;
    const int w_out = (wd + 2 * pad - kw) / stride + 1;
    require(h_out > 0 && w_out > 0, "conv2d: output would be empty");

    const int rows = h_out * w_out;
    const int kcin = kh * kw * cin;
    auto col = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * kcin);
    im2col(x->data(), h, wd, cin, kh, kw, stride, pad, h_out, w_out, col->data());

    auto out = result({h_out, w_out, cout}, {x, w, bias});
    k::gemm(false, false, rows, cout, kcin, col->data(), w->data(), out->data(), false);
    for (int r = 0; r < rows; ++r) {
        k::add(out->data() + static_cast<size_t>(r) * cout, bias->data(),
               out->data() + static_cast<size_t>(r) * cout, static_cast<size_t>(cout));
    }

    if (out->requires_grad) {
        out->backward_fn = [x, w, bias, col, h, wd, cin, kh, kw, cout, stride, pad, h_out,
                            w_out, rows, kcin](Node& self) {
            if (x->requires_grad) {
                std::vector<double> dcol(static_cast<size_t>(rows) * kcin);
                k::gemm(false, true, rows, kcin, cout, self.grad.data(), w->data(),
                        dcol.data(), false);
                col2im_add(dcol.data(), h, wd, cin, kh, kw, stride, pad, h_out, w_out,
                           x->grad_data());
            }
            if (w->requires_grad) {
                k::gemm(true, false, kcin, cout, rows, col->data(), self.grad.data(),
                        w->grad_data(), true);
            }
            if (bias->requires_grad) {
                double* db = bias->grad_data();
                for (int r = 0; r < rows; ++r) {
                    k::axpy(1.0, self.grad.data() + static_cast<size_t>(r) * cout, db,
                            static_cast<size_t>(cout));
                }
            }
        };
    }
    return out;
}

Tensor conv_transpose2d_k2s2(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x->shape.size() == 3 && w->shape.size() == 4 && w->dim(0) == 2 && w->dim(1) == 2,
            "conv_transpose2d_k2s2: expects a 2x2 kernel");
    const int h = x->dim(0), wd = x->dim(1), cin = x->dim(2);
    require(w->dim(2) == cin, "conv_transpose2d_k2s2: input channel mismatch");
    const int cout = w->dim(3);
    const int hw = h * wd;

    auto out = result({2 * h, 2 * wd, cout}, {x, w, bias});
    std::vector<double> tmp(static_cast<size_t>(hw) * cout);
    for (int ky = 0; ky < 2; ++ky) {
        for (int kx = 0; kx < 2; ++kx) {
            const double* wk = w->data() + static_cast<size_t>(ky * 2 + kx) * cin * cout;
            k::gemm(false, false, hw, cout, cin, x->data(), wk, tmp.data(), false);
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < wd; ++xx) {
                    double* o = out->data() +
                                (static_cast<size_t>(2 * y + ky) * (2 * wd) + 2 * xx + kx) * cout;
                    k::add(tmp.data() + (static_cast<size_t>(y) * wd + xx) * cout, bias->data(),
                           o, static_cast<size_t>(cout));
                }
            }
        }
    }

    if (out->requires_grad) {
        out->backward_fn = [x, w, bias, h, wd, cin, cout, hw](Node& self) {
            std::vector<double> dtmp(static_cast<size_t>(hw) * cout);
            for (int ky = 0; ky < 2; ++ky) {
                for (int kx = 0; kx < 2; ++kx) {
                    for (int y = 0; y < h; ++y) {
                        for (int xx = 0; xx < wd; ++xx) {
                            std::memcpy(dtmp.data() + (static_cast<size_t>(y) * wd + xx) * cout,
                                        self.grad.data() +
                                            (static_cast<size_t>(2 * y + ky) * (2 * wd) +
                                             2 * xx + kx) * cout,
                                        sizeof(double) * static_cast<size_t>(cout));
                        }
                    }
                    const size_t wk_off = static_cast<size_t>(ky * 2 + kx) * cin * cout;
                    if (x->requires_grad) {
                        k::gemm(false, true, hw, cin, cout, dtmp.data(), w->data() + wk_off,
                                x->grad_data(), true);
                    }
                    if (w->requires_grad) {
                        k::gemm(true, false, cin, cout, hw, x->data(), dtmp.data(),
                                w->grad_data() + wk_off, true);
                    }
                }
            }
            if (bias->requires_grad) {
                double* db = bias->grad_data();
                const size_t pixels = self.size() / static_cast<size_t>(cout);
                for (size_t r = 0; r < pixels; ++r) {
                    k::axpy(1.0, self.grad.data() + r * cout, db, static_cast<size_t>(cout));
                }
            }
        };
    }
    return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    require(x->shape.size() == 3 && factor >= 1, "upsample_nearest: bad arguments");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    const int oh = h * factor, ow = w * factor;
    auto out = result({oh, ow, c}, {x});
    for (int y = 0; y < oh; ++y) {
        const double* src_row = x->data() + static_cast<size_t>(y / factor) * w * c;
        double* dst_row = out->data() + static_cast<size_t>(y) * ow * c;
        for (int xx = 0; xx < ow; ++xx) {
            std::memcpy(dst_row + static_cast<size_t>(xx) * c,
                        src_row + static_cast<size_t>(xx / factor) * c,
                        sizeof(double) * static_cast<size_t>(c));
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [x, factor, h, w, c, oh, ow](Node& self) {
            (void)h;
            double* dx = x->grad_data();
            for (int y = 0; y < oh; ++y) {
                const double* g_row = self.grad.data() + static_cast<size_t>(y) * ow * c;
                double* dx_row = dx + static_cast<size_t>(y / factor) * w * c;
                for (int xx = 0; xx < ow; ++xx) {
                    k::add(g_row + static_cast<size_t>(xx) * c,
                           dx_row + static_cast<size_t>(xx / factor) * c,
                           dx_row + static_cast<size_t>(xx / factor) * c,
                           static_cast<size_t>(c));
                }
            }
        };
    }
    return out;
}

Tensor upsample_bilinear(const Tensor& x, int factor) {
    require(x->shape.size() == 3 && factor >= 1, "upsample_bilinear: bad arguments");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    const int oh = h * factor, ow = w * factor;
    auto pts = std::make_shared<std::vector<double>>(static_cast<size_t>(oh) * ow * 2);
    const double inv = 1.0 / factor;
    for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
            (*pts)[(static_cast<size_t>(y) * ow + xx) * 2] = (xx + 0.5) * inv - 0.5;
            (*pts)[(static_cast<size_t>(y) * ow + xx) * 2 + 1] = (y + 0.5) * inv - 0.5;
        }
    }
    auto out = result({oh, ow, c}, {x});
    k::bilinear_gather(x->data(), h, w, c, pts->data(), oh * ow, out->data());
    if (out->requires_grad) {
        out->backward_fn = [x, pts, h, w, c, oh, ow](Node& self) {
            k::bilinear_scatter_add(x->grad_data(), h, w, c, pts->data(), oh * ow,
                                    self.grad.data());
        };
    }
    return out;
}

Tensor slice_spatial(const Tensor& x, int y0, int x0, int oh, int ow) {
    require(x->shape.size() == 3, "slice_spatial: expects {h, w, c}");
    const int h = x->dim(0), w = x->dim(1), c = x->dim(2);
    require(y0 >= 0 && x0 >= 0 && y0 + oh <= h && x0 + ow <= w,
            "slice_spatial: window out of bounds");
    auto out = result({oh, ow, c}, {x});
    for (int y = 0; y < oh; ++y) {
        std::memcpy(out->data() + static_cast<size_t>(y) * ow * c,
                    x->data() + (static_cast<size_t>(y0 + y) * w + x0) * c,
                    sizeof(double) * static_cast<size_t>(ow) * c);
    }
    if (out->requires_grad) {
        out->backward_fn = [x, y0, x0, oh, ow, w, c](Node& self) {
            double* dx = x->grad_data();
            for (int y = 0; y < oh; ++y) {
                k::add(self.grad.data() + static_cast<size_t>(y) * ow * c,
                       dx + (static_cast<size_t>(y0 + y) * w + x0) * c,
                       dx + (static_cast<size_t>(y0 + y) * w + x0) * c,
                       static_cast<size_t>(ow) * c);
            }
        };
    }
    return out;
}

namespace {

// Concatenation along the last axis of rank-`rank` tensors whose leading dims
// agree; covers both channel concat ({h,w,c}) and column concat ({m,c}).
Tensor concat_last_axis(const std::vector<Tensor>& parts, size_t rank, const char* what) {
    require(!parts.empty(), "concat: no inputs");
    int total_c = 0;
    for (const auto& p : parts) {
        require(p->shape.size() == rank, what);
        for (size_t d = 0; d + 1 < rank; ++d) {
            require(p->shape[d] == parts[0]->shape[d], what);
        }
        total_c += p->shape.back();
    }
    std::vector<int> out_shape = parts[0]->shape;
    out_shape.back() = total_c;

    auto out = make_tensor(out_shape);
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& p : parts) needs_grad |= p->requires_grad;
    }
    if (needs_grad) {
        out->requires_grad = true;
        out->parents = parts;
    }

    const size_t rows = out->size() / static_cast<size_t>(total_c);
    size_t offset = 0;
    for (const auto& p : parts) {
        const size_t c = static_cast<size_t>(p->shape.back());
        for (size_t r = 0; r < rows; ++r) {
            std::memcpy(out->data() + r * total_c + offset, p->data() + r * c,
                        sizeof(double) * c);
        }
        offset += c;
    }

    if (out->requires_grad) {
        auto parts_copy = parts;
        out->backward_fn = [parts_copy, rows, total_c](Node& self) {
            size_t off = 0;
            for (const auto& p : parts_copy) {
                const size_t c = static_cast<size_t>(p->shape.back());
                if (p->requires_grad) {
                    double* dp = p->grad_data();
                    for (size_t r = 0; r < rows; ++r) {
                        k::add(self.grad.data() + r * total_c + off, dp + r * c, dp + r * c, c);
                    }
                }
                off += c;
            }
        };
    }
    return out;
}

} // namespace

Tensor concat_channels(const std::vector<Tensor>& parts) {
    return concat_last_axis(parts, 3, "concat_channels: incompatible shapes");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    return concat_last_axis(parts, 2, "concat_cols: incompatible shapes");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int c = parts[0]->dim(1);
    int total_m = 0;
    for (const auto& p : parts) {
        require(p->shape.size() == 2 && p->dim(1) == c, "concat_rows: column mismatch");
        total_m += p->dim(0);
    }
    auto out = make_tensor({total_m, c});
    bool needs_grad = false;
    if (grad_enabled()) {
        for (const auto& p : parts) needs_grad |= p->requires_grad;
    }
    if (needs_grad) {
        out->requires_grad = true;
        out->parents = parts;
    }
    size_t offset = 0;
    for (const auto& p : parts) {
        std::memcpy(out->data() + offset, p->data(), sizeof(double) * p->size());
        offset += p->size();
    }
    if (out->requires_grad) {
        auto parts_copy = parts;
        out->backward_fn = [parts_copy](Node& self) {
            size_t off = 0;
            for (const auto& p : parts_copy) {
                if (p->requires_grad) {
                    k::axpy(1.0, self.grad.data() + off, p->grad_data(), p->size());
                }
                off += p->size();
            }
        };
    }
    return out;
}

Tensor rows_select(const Tensor& x, const std::vector<int>& rows) {
    require(x->shape.size() == 2, "rows_select: expects {m, c}");
    const int c = x->dim(1);
    for (int r : rows) require(r >= 0 && r < x->dim(0), "rows_select: row out of range");
    auto out = result({static_cast<int>(rows.size()), c}, {x});
    for (size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(out->data() + i * c, x->data() + static_cast<size_t>(rows[i]) * c,
                    sizeof(double) * static_cast<size_t>(c));
    }
    if (out->requires_grad) {
        out->backward_fn = [x, rows, c](Node& self) {
            double* dx = x->grad_data();
            for (size_t i = 0; i < rows.size(); ++i) {
                k::axpy(1.0, self.grad.data() + i * c, dx + static_cast<size_t>(rows[i]) * c,
                        static_cast<size_t>(c));
            }
        };
    }
    return out;
}

Tensor sample_level(const Tensor& level, const Tensor& pts, double stride) {
    require(level->shape.size() == 3, "sample_level: level must be {h, w, c}");
    require(pts->shape.size() == 2 && pts->dim(1) == 2, "sample_level: points must be {m, 2}");
    const int h = level->dim(0), w = level->dim(1), c = level->dim(2);
    const int m = pts->dim(0);

    auto feat_pts = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * 2);
    for (int i = 0; i < m; ++i) {
        (*feat_pts)[2 * i] = (pts->value[2 * i] + 0.5) / stride - 0.5;
        (*feat_pts)[2 * i + 1] = (pts->value[2 * i + 1] + 0.5) / stride - 0.5;
    }

    auto out = result({m, c}, {level, pts});
    k::bilinear_gather(level->data(), h, w, c, feat_pts->data(), m, out->data());

    if (out->requires_grad) {
        out->backward_fn = [level, pts, feat_pts, h, w, c, m, stride](Node& self) {
            if (level->requires_grad) {
                k::bilinear_scatter_add(level->grad_data(), h, w, c, feat_pts->data(), m,
                                        self.grad.data());
            }
            if (pts->requires_grad) {
                std::vector<double> dfeat(static_cast<size_t>(m) * 2, 0.0);
                k::bilinear_coord_grad(level->data(), h, w, c, feat_pts->data(), m,
                                       self.grad.data(), dfeat.data());
                k::axpy(1.0 / stride, dfeat.data(), pts->grad_data(), dfeat.size());
            }
        };
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    auto out = result({1}, {x});
    out->value[0] = k::sum(x->data(), x->size());
    if (out->requires_grad) {
        out->backward_fn = [x](Node& self) {
            const double g = self.grad[0];
            double* dx = x->grad_data();
            for (size_t i = 0; i < x->size(); ++i) dx[i] += g;
        };
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<double>& weights, double norm) {
    require(logits->shape.size() == 2, "softmax_cross_entropy: logits must be {m, c}");
    const int m = logits->dim(0), c = logits->dim(1);
    require(static_cast<int>(targets.size()) == m && weights.size() == targets.size(),
            "softmax_cross_entropy: targets/weights size mismatch");
    require(norm > 0.0, "softmax_cross_entropy: norm must be positive");
    for (int t : targets) require(t >= 0 && t < c, "softmax_cross_entropy: target out of range");

    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * c);
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = logits->data() + static_cast<size_t>(i) * c;
        double* prow = probs->data() + static_cast<size_t>(i) * c;
        const double mx = *std::max_element(row, row + c);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= denom;
        loss += weights[static_cast<size_t>(i)] * -std::log(prow[targets[static_cast<size_t>(i)]]);
    }

    auto out = result({1}, {logits});
    out->value[0] = loss / norm;
    if (out->requires_grad) {
        out->backward_fn = [logits, probs, targets, weights, norm, m, c](Node& self) {
            const double g = self.grad[0] / norm;
            double* dl = logits->grad_data();
            for (int i = 0; i < m; ++i) {
                const double gw = g * weights[static_cast<size_t>(i)];
                const double* prow = probs->data() + static_cast<size_t>(i) * c;
                double* drow = dl + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) drow[j] += gw * prow[j];
                drow[targets[static_cast<size_t>(i)]] -= gw;
            }
        };
    }
    return out;
}

std::vector<double> row_softmax(const Tensor& logits) {
    require(logits->shape.size() == 2, "row_softmax: expects {m, c}");
    const int m = logits->dim(0), c = logits->dim(1);
    std::vector<double> probs(static_cast<size_t>(m) * c);
    for (int i = 0; i < m; ++i) {
        const double* row = logits->data() + static_cast<size_t>(i) * c;
        double* prow = probs.data() + static_cast<size_t>(i) * c;
        const double mx = *std::max_element(row, row + c);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= denom;
    }
    return probs;
}

} // namespace pointdet::ag
