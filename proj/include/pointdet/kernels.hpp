#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

// Data-parallel inner loops behind the tensor ops. Every kernel exists in a
// scalar reference lane and (when compiled in and supported by the CPU) an
// AVX2 lane. The active lane is picked once at runtime; force_scalar() pins
// the reference lane, which is what strict-deterministic mode uses. The two
// lanes agree up to floating-point non-associativity and are equivalence
// tested against each other.

namespace pointdet::kernels {

enum class Lane { scalar, avx2 };

bool cpu_supports_avx2();
bool built_with_avx2();
Lane active_lane();
void force_scalar(bool on);
bool scalar_forced();
const char* lane_name(Lane lane);

// Elementwise
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* x, double alpha, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n); // y += alpha*x
void relu(const double* x, double* out, size_t n);
// dx += dy where x > 0
void relu_backward(const double* x, const double* dy, double* dx, size_t n);
double dot(const double* a, const double* b, size_t n);
double sum(const double* x, size_t n);

// C(m x n) = A op B (+ C when accumulate). A is m x k after the optional
// transpose, B is k x n after its optional transpose; all row-major, packed.
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate);

// Bilinear point sampling on an h x w x c feature map (HWC, packed).
// pts holds m (x, y) pairs in feature-space coordinates. Corner indices are
// clamped to the map (border replication); weights come from the unclamped
// fractional parts.
void bilinear_gather(const double* level, int h, int w, int c,
                     const double* pts, int m, double* out);
// level_grad += scatter of dout through the sampling weights
void bilinear_scatter_add(double* level_grad, int h, int w, int c,
                          const double* pts, int m, const double* dout);
// dpts += d(sum(dout * sample)) / d(pts), feature-space units
void bilinear_coord_grad(const double* level, int h, int w, int c,
                         const double* pts, int m, const double* dout,
                         double* dpts);

// Decoupled weight decay Adam step (step is 1-based).
void adamw_update(double* param, const double* grad, double* m, double* v,
                  size_t n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, int step);

namespace scalar {
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* x, double alpha, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
void relu(const double* x, double* out, size_t n);
void relu_backward(const double* x, const double* dy, double* dx, size_t n);
double dot(const double* a, const double* b, size_t n);
double sum(const double* x, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate);
void bilinear_gather(const double* level, int h, int w, int c,
                     const double* pts, int m, double* out);
void bilinear_scatter_add(double* level_grad, int h, int w, int c,
                          const double* pts, int m, const double* dout);
void bilinear_coord_grad(const double* level, int h, int w, int c,
                         const double* pts, int m, const double* dout,
                         double* dpts);
void adamw_update(double* param, const double* grad, double* m, double* v,
                  size_t n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, int step);
} // namespace scalar

#if defined(POINTDET_HAVE_AVX2)
namespace avx2 {
void add(const double* a, const double* b, double* out, size_t n);
void sub(const double* a, const double* b, double* out, size_t n);
void mul(const double* a, const double* b, double* out, size_t n);
void scale(const double* x, double alpha, double* out, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
void relu(const double* x, double* out, size_t n);
void relu_backward(const double* x, const double* dy, double* dx, size_t n);
double dot(const double* a, const double* b, size_t n);
double sum(const double* x, size_t n);
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate);
void bilinear_gather(const double* level, int h, int w, int c,
                     const double* pts, int m, double* out);
void bilinear_scatter_add(double* level_grad, int h, int w, int c,
                          const double* pts, int m, const double* dout);
void bilinear_coord_grad(const double* level, int h, int w, int c,
                         const double* pts, int m, const double* dout,
                         double* dpts);
void adamw_update(double* param, const double* grad, double* m, double* v,
                  size_t n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, int step);
} // namespace avx2
#endif

// Shared corner/weight arithmetic so both lanes and the geometry module
// resolve a sample point identically.
struct BilinearCell {
    int x0, x1, y0, y1;   // clamped corner indices
    double wx, wy;        // fractional parts of the unclamped coordinate
};

inline int clamp_index(int v, int hi) {
    if (v < 0) return 0;
    if (v > hi) return hi;
    return v;
}

inline BilinearCell resolve_bilinear_cell(double px, double py, int h, int w) {
    // floor via cast is wrong for negatives; use the real floor
    const double fx = std::floor(px);
    const double fy = std::floor(py);
    BilinearCell cell;
    cell.wx = px - fx;
    cell.wy = py - fy;
    const int ix = static_cast<int>(fx);
    const int iy = static_cast<int>(fy);
    cell.x0 = clamp_index(ix, w - 1);
    cell.x1 = clamp_index(ix + 1, w - 1);
    cell.y0 = clamp_index(iy, h - 1);
    cell.y1 = clamp_index(iy + 1, h - 1);
    return cell;
}

} // namespace pointdet::kernels
