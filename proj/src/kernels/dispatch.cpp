#include "pointdet/kernels.hpp"

#include <atomic>
#include <cstdlib>

namespace pointdet::kernels {

namespace {

std::atomic<bool> g_force_scalar{[] {
    const char* env = std::getenv("POINTDET_FORCE_SCALAR");
    return env != nullptr && env[0] != '\0' && env[0] != '0';
}()};

bool detect_avx2() {
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const bool g_cpu_has_avx2 = detect_avx2();

} // namespace

bool cpu_supports_avx2() { return g_cpu_has_avx2; }

bool built_with_avx2() {
#if defined(POINTDET_HAVE_AVX2)
    return true;
#else
    return false;
#endif
}

void force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }

bool scalar_forced() { return g_force_scalar.load(std::memory_order_relaxed); }

Lane active_lane() {
    if (scalar_forced()) return Lane::scalar;
    if (built_with_avx2() && cpu_supports_avx2()) return Lane::avx2;
    return Lane::scalar;
}

const char* lane_name(Lane lane) {
    switch (lane) {
        case Lane::avx2: return "avx2";
        default: return "scalar";
    }
}

#if defined(POINTDET_HAVE_AVX2)
#define POINTDET_DISPATCH(call_scalar, call_avx2) \
    if (active_lane() == Lane::avx2) {            \
        call_avx2;                                \
    } else {                                      \
        call_scalar;                              \
    }
#else
#define POINTDET_DISPATCH(call_scalar, call_avx2) call_scalar;
#endif

void add(const double* a, const double* b, double* out, size_t n) {
    POINTDET_DISPATCH(scalar::add(a, b, out, n), avx2::add(a, b, out, n))
}

void sub(const double* a, const double* b, double* out, size_t n) {
    POINTDET_DISPATCH(scalar::sub(a, b, out, n), avx2::sub(a, b, out, n))
}

void mul(const double* a, const double* b, double* out, size_t n) {
    POINTDET_DISPATCH(scalar::mul(a, b, out, n), avx2::mul(a, b, out, n))
}

void scale(const double* x, double alpha, double* out, size_t n) {
    POINTDET_DISPATCH(scalar::scale(x, alpha, out, n), avx2::scale(x, alpha, out, n))
}

void axpy(double alpha, const double* x, double* y, size_t n) {
    POINTDET_DISPATCH(scalar::axpy(alpha, x, y, n), avx2::axpy(alpha, x, y, n))
}

void relu(const double* x, double* out, size_t n) {
    POINTDET_DISPATCH(scalar::relu(x, out, n), avx2::relu(x, out, n))
}

void relu_backward(const double* x, const double* dy, double* dx, size_t n) {
    POINTDET_DISPATCH(scalar::relu_backward(x, dy, dx, n), avx2::relu_backward(x, dy, dx, n))
}

double dot(const double* a, const double* b, size_t n) {
#if defined(POINTDET_HAVE_AVX2)
    if (active_lane() == Lane::avx2) return avx2::dot(a, b, n);
#endif
    return scalar::dot(a, b, n);
}

double sum(const double* x, size_t n) {
#if defined(POINTDET_HAVE_AVX2)
    if (active_lane() == Lane::avx2) return avx2::sum(x, n);
#endif
    return scalar::sum(x, n);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const double* a, const double* b, double* c, bool accumulate) {
    POINTDET_DISPATCH(scalar::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate),
                      avx2::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate))
}

void bilinear_gather(const double* level, int h, int w, int c,
                     const double* pts, int m, double* out) {
    POINTDET_DISPATCH(scalar::bilinear_gather(level, h, w, c, pts, m, out),
                      avx2::bilinear_gather(level, h, w, c, pts, m, out))
}

void bilinear_scatter_add(double* level_grad, int h, int w, int c,
                          const double* pts, int m, const double* dout) {
    POINTDET_DISPATCH(scalar::bilinear_scatter_add(level_grad, h, w, c, pts, m, dout),
                      avx2::bilinear_scatter_add(level_grad, h, w, c, pts, m, dout))
}

void bilinear_coord_grad(const double* level, int h, int w, int c,
                         const double* pts, int m, const double* dout, double* dpts) {
    POINTDET_DISPATCH(scalar::bilinear_coord_grad(level, h, w, c, pts, m, dout, dpts),
                      avx2::bilinear_coord_grad(level, h, w, c, pts, m, dout, dpts))
}

void adamw_update(double* param, const double* grad, double* m, double* v,
                  size_t n, double lr, double beta1, double beta2, double eps,
                  double weight_decay, int step) {
    POINTDET_DISPATCH(
        scalar::adamw_update(param, grad, m, v, n, lr, beta1, beta2, eps, weight_decay, step),
        avx2::adamw_update(param, grad, m, v, n, lr, beta1, beta2, eps, weight_decay, step))
}

#undef POINTDET_DISPATCH

} // namespace pointdet::kernels
