#include "pointdet/kernels.hpp"

// Reference lane. Plain loops, no reassociation, compiled with
// -ffp-contract=off so results are bit-reproducible across builds.

namespace pointdet::kernels::scalar {

void add(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* x, double alpha, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu(const double* x, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

double dot(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) {
        for (int i = 0; i < m * n; ++i) c[i] = 0.0;
    }
    if (!trans_a && !trans_b) {
        // a: m x k, b: k x n
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                const double* brow = b + p * n;
                double* crow = c + i * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        // a: m x k, b: n x k
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                const double* arow = a + i * k;
                const double* brow = b + j * k;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c[i * n + j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        // a: k x m, b: k x n
        for (int p = 0; p < k; ++p) {
            const double* arow = a + p * m;
            const double* brow = b + p * n;
            for (int i = 0; i < m; ++i) {
                const double av = arow[i];
                double* crow = c + i * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        // a: k x m, b: n x k
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
                c[i * n + j] += acc;
            }
        }
    }
}

void bilinear_gather(const double* level, int h, int w, int c,
                     const double* pts, int m, double* out) {
    for (int i = 0; i < m; ++i) {
        const BilinearCell cell = resolve_bilinear_cell(pts[2 * i], pts[2 * i + 1], h, w);
        const double w00 = (1.0 - cell.wy) * (1.0 - cell.wx);
        const double w01 = (1.0 - cell.wy) * cell.wx;
        const double w10 = cell.wy * (1.0 - cell.wx);
        const double w11 = cell.wy * cell.wx;
        const double* p00 = level + (cell.y0 * w + cell.x0) * c;
        const double* p01 = level + (cell.y0 * w + cell.x1) * c;
        const double* p10 = level + (cell.y1 * w + cell.x0) * c;
        const double* p11 = level + (cell.y1 * w + cell.x1) * c;
        double* o = out + i * c;
        for (int ch = 0; ch < c; ++ch) {
            o[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
        }
    }
}

void bilinear_scatter_add(double* level_grad, int h, int w, int c,
                          const double* pts, int m, const double* dout) {
    for (int i = 0; i < m; ++i) {
        const BilinearCell cell = resolve_bilinear_cell(pts[2 * i], pts[2 * i + 1], h, w);
        const double w00 = (1.0 - cell.wy) * (1.0 - cell.wx);
        const double w01 = (1.0 - cell.wy) * cell.wx;
        const double w10 = cell.wy * (1.0 - cell.wx);
        const double w11 = cell.wy * cell.wx;
        double* p00 = level_grad + (cell.y0 * w + cell.x0) * c;
        double* p01 = level_grad + (cell.y0 * w + cell.x1) * c;
        double* p10 = level_grad + (cell.y1 * w + cell.x0) * c;
        double* p11 = level_grad + (cell.y1 * w + cell.x1) * c;
        const double* d = dout + i * c;
        for (int ch = 0; ch < c; ++ch) {
            p00[ch] += w00 * d[ch];
            p01[ch] += w01 * d[ch];
            p10[ch] += w10 * d[ch];
            p11[ch] += w11 * d[ch];
        }
    }
}

void bilinear_coord_grad(const double* level, int h, int w, int c,
                         const double* pts, int m, const double* dout,
                         double* dpts) {
    for (int i = 0; i < m; ++i) {
        const BilinearCell cell = resolve_bilinear_cell(pts[2 * i], pts[2 * i + 1], h, w);
        const double* p00 = level + (cell.y0 * w + cell.x0) * c;
        const double* p01 = level + (cell.y0 * w + cell.x1) * c;
        const double* p10 = level + (cell.y1 * w + cell.x0) * c;
        const double* p11 = level + (cell.y1 * w + cell.x1) * c;
        const double* d = dout + i * c;
        double gx = 0.0;
        double gy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            // d(sample)/dwx and d(sample)/dwy per channel
            const double dwx = (1.0 - cell.wy) * (p01[ch] - p00[ch]) + cell.wy * (p11[ch] - p10[ch]);
            const double dwy = (1.0 - cell.wx) * (p10[ch] - p00[ch]) + cell.wx * (p11[ch] - p01[ch]);
            gx += d[ch] * dwx;
            gy += d[ch] * dwy;
        }
        dpts[2 * i] += gx;
        dpts[2 * i + 1] += gy;
    }
}

void adamw_update(double* param, const double* grad, double* m, double* v,
                  size_t n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, int step) {
    const double bc1 = 1.0 - std::pow(beta1, step);
    const double bc2 = 1.0 - std::pow(beta2, step);
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
    }
}

} // namespace pointdet::kernels::scalar
