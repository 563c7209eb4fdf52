#include "pointdet/kernels.hpp"

#if defined(POINTDET_HAVE_AVX2)

#include <immintrin.h>

// AVX2/FMA lane, 4 doubles per vector. Tail elements fall back to scalar
// arithmetic inside each kernel. Results may differ from the reference lane
// by FMA rounding and reassociation only.

namespace pointdet::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

} // namespace

void add(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const double* x, double alpha, double* out, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) out[i] = alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu(const double* x, double* out, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d xv = _mm256_loadu_pd(x + i);
        const __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
        const __m256d dyv = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), dyv));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

double dot(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double result = hsum(acc);
    for (; i < n; ++i) result += a[i] * b[i];
    return result;
}

double sum(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    }
    double result = hsum(acc);
    for (; i < n; ++i) result += x[i];
    return result;
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate) {
        size_t total = static_cast<size_t>(m) * n;
        size_t i = 0;
        const __m256d zero = _mm256_setzero_pd();
        for (; i + 4 <= total; i += 4) _mm256_storeu_pd(c + i, zero);
        for (; i < total; ++i) c[i] = 0.0;
    }
    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            for (int p = 0; p < k; ++p) {
                const __m256d av = _mm256_set1_pd(a[i * k + p]);
                const double* brow = b + p * n;
                double* crow = c + i * n;
                int j = 0;
                for (; j + 4 <= n; j += 4) {
                    __m256d cv = _mm256_loadu_pd(crow + j);
                    cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), cv);
                    _mm256_storeu_pd(crow + j, cv);
                }
                const double as = a[i * k + p];
                for (; j < n; ++j) crow[j] += as * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            for (int j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                c[i * n + j] += dot(arow, brow, static_cast<size_t>(k));
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const double* arow = a + p * m;
            const double* brow = b + p * n;
            for (int i = 0; i < m; ++i) {
                const __m256d av = _mm256_set1_pd(arow[i]);
                double* crow = c + i * n;
                int j = 0;
                for (; j + 4 <= n; j += 4) {
                    __m256d cv = _mm256_loadu_pd(crow + j);
                    cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), cv);
                    _mm256_storeu_pd(crow + j, cv);
                }
                for (; j < n; ++j) crow[j] += arow[i] * brow[j];
            }
        }
    } else {
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
        const __m256d v00 = _mm256_set1_pd(w00);
        const __m256d v01 = _mm256_set1_pd(w01);
        const __m256d v10 = _mm256_set1_pd(w10);
        const __m256d v11 = _mm256_set1_pd(w11);
        int ch = 0;
        for (; ch + 4 <= c; ch += 4) {
            __m256d acc = _mm256_mul_pd(v00, _mm256_loadu_pd(p00 + ch));
            acc = _mm256_fmadd_pd(v01, _mm256_loadu_pd(p01 + ch), acc);
            acc = _mm256_fmadd_pd(v10, _mm256_loadu_pd(p10 + ch), acc);
            acc = _mm256_fmadd_pd(v11, _mm256_loadu_pd(p11 + ch), acc);
            _mm256_storeu_pd(o + ch, acc);
        }
        for (; ch < c; ++ch) {
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
        // Corner rows can alias when indices clamp, so corners are updated
        // one at a time.
        const __m256d v00 = _mm256_set1_pd(w00);
        const __m256d v01 = _mm256_set1_pd(w01);
        const __m256d v10 = _mm256_set1_pd(w10);
        const __m256d v11 = _mm256_set1_pd(w11);
        int ch = 0;
        for (; ch + 4 <= c; ch += 4) {
            const __m256d dv = _mm256_loadu_pd(d + ch);
            _mm256_storeu_pd(p00 + ch, _mm256_fmadd_pd(v00, dv, _mm256_loadu_pd(p00 + ch)));
            _mm256_storeu_pd(p01 + ch, _mm256_fmadd_pd(v01, dv, _mm256_loadu_pd(p01 + ch)));
            _mm256_storeu_pd(p10 + ch, _mm256_fmadd_pd(v10, dv, _mm256_loadu_pd(p10 + ch)));
            _mm256_storeu_pd(p11 + ch, _mm256_fmadd_pd(v11, dv, _mm256_loadu_pd(p11 + ch)));
        }
        for (; ch < c; ++ch) {
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
        const __m256d vwx = _mm256_set1_pd(cell.wx);
        const __m256d vwy = _mm256_set1_pd(cell.wy);
        const __m256d one = _mm256_set1_pd(1.0);
        __m256d gxv = _mm256_setzero_pd();
        __m256d gyv = _mm256_setzero_pd();
        int ch = 0;
        for (; ch + 4 <= c; ch += 4) {
            const __m256d a = _mm256_loadu_pd(p00 + ch);
            const __m256d bq = _mm256_loadu_pd(p01 + ch);
            const __m256d cq = _mm256_loadu_pd(p10 + ch);
            const __m256d dq = _mm256_loadu_pd(p11 + ch);
            const __m256d dv = _mm256_loadu_pd(d + ch);
            __m256d dwx = _mm256_mul_pd(_mm256_sub_pd(one, vwy), _mm256_sub_pd(bq, a));
            dwx = _mm256_fmadd_pd(vwy, _mm256_sub_pd(dq, cq), dwx);
            __m256d dwy = _mm256_mul_pd(_mm256_sub_pd(one, vwx), _mm256_sub_pd(cq, a));
            dwy = _mm256_fmadd_pd(vwx, _mm256_sub_pd(dq, bq), dwy);
            gxv = _mm256_fmadd_pd(dv, dwx, gxv);
            gyv = _mm256_fmadd_pd(dv, dwy, gyv);
        }
        double gx = hsum(gxv);
        double gy = hsum(gyv);
        for (; ch < c; ++ch) {
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
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
    const __m256d vbc1 = _mm256_set1_pd(1.0 / bc1);
    const __m256d vbc2 = _mm256_set1_pd(1.0 / bc2);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vwd = _mm256_set1_pd(weight_decay);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d g = _mm256_loadu_pd(grad + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_fmadd_pd(vb1, mv, _mm256_mul_pd(vb1c, g));
        vv = _mm256_fmadd_pd(vb2, vv, _mm256_mul_pd(vb2c, _mm256_mul_pd(g, g)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(mv, vbc1);
        const __m256d vhat = _mm256_mul_pd(vv, vbc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        __m256d p = _mm256_loadu_pd(param + i);
        __m256d update = _mm256_div_pd(mhat, denom);
        update = _mm256_fmadd_pd(vwd, p, update);
        p = _mm256_fnmadd_pd(vlr, update, p);
        _mm256_storeu_pd(param + i, p);
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
    }
}

} // namespace pointdet::kernels::avx2

#endif // POINTDET_HAVE_AVX2
