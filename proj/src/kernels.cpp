#include "cprn/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cprn::kernels {

namespace {

inline real gelu_tanh(real x) {
    // tanh form, fixed constants
    const real k0 = real(0.7978845608028654);  // sqrt(2/pi)
    const real k1 = real(0.044715);
    return real(0.5) * x * (real(1) + std::tanh(k0 * (x + k1 * x * x * x)));
}

inline real gelu_tanh_grad(real x) {
    const real k0 = real(0.7978845608028654);
    const real k1 = real(0.044715);
    const real u = k0 * (x + k1 * x * x * x);
    const real t = std::tanh(u);
    const real du = k0 * (real(1) + real(3) * k1 * x * x);
    return real(0.5) * (real(1) + t) + real(0.5) * x * (real(1) - t * t) * du;
}

inline real sigmoid_stable(real x) {
    if (x >= real(0)) {
        return real(1) / (real(1) + std::exp(-x));
    }
    const real e = std::exp(x);
    return e / (real(1) + e);
}

inline real apply_unary(Unary kind, real x) {
    switch (kind) {
        case Unary::Gelu: return gelu_tanh(x);
        case Unary::Relu: return x > real(0) ? x : real(0);
        case Unary::Sigmoid: return sigmoid_stable(x);
    }
    return real(0);
}

inline real apply_unary_grad(Unary kind, real x) {
    switch (kind) {
        case Unary::Gelu: return gelu_tanh_grad(x);
        case Unary::Relu: return x > real(0) ? real(1) : real(0);
        case Unary::Sigmoid: {
            const real s = sigmoid_stable(x);
            return s * (real(1) - s);
        }
    }
    return real(0);
}

inline real apply_binary(Binary kind, real a, real b) {
    switch (kind) {
        case Binary::Add: return a + b;
        case Binary::Sub: return a - b;
        case Binary::Mul: return a * b;
        case Binary::Div: return a / b;
    }
    return real(0);
}

// One softmax slice: elements at x[o*len*inner + j*inner + i], j = 0..len-1.
inline void softmax_slice(const real* x, real* y, int len, long stride) {
    real mx = x[0];
    for (int j = 1; j < len; ++j) {
        const real v = x[j * stride];
        if (v > mx) mx = v;
    }
    real sum = real(0);
    for (int j = 0; j < len; ++j) {
        const real e = std::exp(x[j * stride] - mx);
        y[j * stride] = e;
        sum += e;
    }
    const real inv = real(1) / sum;
    for (int j = 0; j < len; ++j) {
        y[j * stride] *= inv;
    }
}

// Bilinear sample weights for one output index, align-corners=false.
struct Lerp {
    int lo, hi;
    real wlo, whi;
};

inline Lerp lerp_coeff(int out_i, int in_len, int out_len) {
    const real src = (real(out_i) + real(0.5)) * real(in_len) / real(out_len) - real(0.5);
    real f = std::floor(src);
    int lo = static_cast<int>(f);
    real t = src - f;
    int hi = lo + 1;
    if (lo < 0) { lo = 0; }
    if (hi > in_len - 1) { hi = in_len - 1; }
    if (lo > in_len - 1) { lo = in_len - 1; }
    return {lo, hi, real(1) - t, t};
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference
// ---------------------------------------------------------------------------

namespace serial {

void matmul(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = real(0);
        for (int t = 0; t < k; ++t) {
            const real av = a[static_cast<long>(i) * k + t];
            const real* bt = b + static_cast<long>(t) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

void linear(const real* x, const real* w, const real* bias, real* y,
            int positions, int cin, int cout) {
    for (int p = 0; p < positions; ++p) {
        const real* xp = x + static_cast<long>(p) * cin;
        real* yp = y + static_cast<long>(p) * cout;
        for (int j = 0; j < cout; ++j) yp[j] = bias[j];
        for (int t = 0; t < cin; ++t) {
            const real xv = xp[t];
            const real* wt = w + static_cast<long>(t) * cout;
            for (int j = 0; j < cout; ++j) yp[j] += xv * wt[j];
        }
    }
}

void softmax(const real* x, real* y, int outer, int len, int inner) {
    for (int o = 0; o < outer; ++o) {
        for (int i = 0; i < inner; ++i) {
            const long base = static_cast<long>(o) * len * inner + i;
            softmax_slice(x + base, y + base, len, inner);
        }
    }
}

void unary(Unary kind, const real* x, real* y, long n) {
    for (long i = 0; i < n; ++i) y[i] = apply_unary(kind, x[i]);
}

void binary(Binary kind, const real* a, const real* b, real* y, long n) {
    for (long i = 0; i < n; ++i) y[i] = apply_binary(kind, a[i], b[i]);
}

void mean_pool_width(const real* x, real* out, int h, int w, int c) {
    const real inv = real(1) / real(w);
    for (int i = 0; i < h; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            real s = real(0);
            for (int j = 0; j < w; ++j) s += x[(static_cast<long>(i) * w + j) * c + ch];
            out[static_cast<long>(i) * c + ch] = s * inv;
        }
    }
}

void mean_pool_height(const real* x, real* out, int h, int w, int c) {
    const real inv = real(1) / real(h);
    for (int j = 0; j < w; ++j) {
        for (int ch = 0; ch < c; ++ch) {
            real s = real(0);
            for (int i = 0; i < h; ++i) s += x[(static_cast<long>(i) * w + j) * c + ch];
            out[static_cast<long>(j) * c + ch] = s * inv;
        }
    }
}

void bilinear(const real* x, real* y, int h, int w, int c, int oh, int ow) {
    for (int i = 0; i < oh; ++i) {
        const Lerp ly = lerp_coeff(i, h, oh);
        for (int j = 0; j < ow; ++j) {
            const Lerp lx = lerp_coeff(j, w, ow);
            const real* p00 = x + (static_cast<long>(ly.lo) * w + lx.lo) * c;
            const real* p01 = x + (static_cast<long>(ly.lo) * w + lx.hi) * c;
            const real* p10 = x + (static_cast<long>(ly.hi) * w + lx.lo) * c;
            const real* p11 = x + (static_cast<long>(ly.hi) * w + lx.hi) * c;
            real* yp = y + (static_cast<long>(i) * ow + j) * c;
            for (int ch = 0; ch < c; ++ch) {
                yp[ch] = ly.wlo * (lx.wlo * p00[ch] + lx.whi * p01[ch]) +
                         ly.whi * (lx.wlo * p10[ch] + lx.whi * p11[ch]);
            }
        }
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP-parallel kernels
// ---------------------------------------------------------------------------

namespace par {

void matmul(const real* a, const real* b, real* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = real(0);
        for (int t = 0; t < k; ++t) {
            const real av = a[static_cast<long>(i) * k + t];
            const real* bt = b + static_cast<long>(t) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const real* ai = a + static_cast<long>(i) * k;
        real* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* bj = b + static_cast<long>(j) * k;
            real s = real(0);
            for (int t = 0; t < k; ++t) s += ai[t] * bj[t];
            ci[j] = s;
        }
    }
}

void matmul_tn(const real* a, const real* b, real* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        real* ci = c + static_cast<long>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = real(0);
        for (int t = 0; t < k; ++t) {
            const real av = a[static_cast<long>(t) * m + i];
            const real* bt = b + static_cast<long>(t) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
}

void linear(const real* x, const real* w, const real* bias, real* y,
            int positions, int cin, int cout) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < positions; ++p) {
        const real* xp = x + static_cast<long>(p) * cin;
        real* yp = y + static_cast<long>(p) * cout;
        for (int j = 0; j < cout; ++j) yp[j] = bias[j];
        for (int t = 0; t < cin; ++t) {
            const real xv = xp[t];
            const real* wt = w + static_cast<long>(t) * cout;
            for (int j = 0; j < cout; ++j) yp[j] += xv * wt[j];
        }
    }
}

void softmax(const real* x, real* y, int outer, int len, int inner) {
    const long slices = static_cast<long>(outer) * inner;
#pragma omp parallel for schedule(static)
    for (long s = 0; s < slices; ++s) {
        const long o = s / inner;
        const long i = s % inner;
        const long base = o * len * inner + i;
        softmax_slice(x + base, y + base, len, inner);
    }
}

void softmax_backward(const real* y, const real* dy, real* dx,
                      int outer, int len, int inner) {
    const long slices = static_cast<long>(outer) * inner;
#pragma omp parallel for schedule(static)
    for (long s = 0; s < slices; ++s) {
        const long o = s / inner;
        const long i = s % inner;
        const long base = o * len * inner + i;
        real dot = real(0);
        for (int j = 0; j < len; ++j) {
            const long at = base + static_cast<long>(j) * inner;
            dot += dy[at] * y[at];
        }
        for (int j = 0; j < len; ++j) {
            const long at = base + static_cast<long>(j) * inner;
            dx[at] += y[at] * (dy[at] - dot);
        }
    }
}

void unary(Unary kind, const real* x, real* y, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) y[i] = apply_unary(kind, x[i]);
}

void unary_backward(Unary kind, const real* x, const real* dy, real* dx, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) dx[i] += dy[i] * apply_unary_grad(kind, x[i]);
}

void binary(Binary kind, const real* a, const real* b, real* y, long n) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) y[i] = apply_binary(kind, a[i], b[i]);
}

void mean_pool_width(const real* x, real* out, int h, int w, int c) {
    const real inv = real(1) / real(w);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < h; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            real s = real(0);
            for (int j = 0; j < w; ++j) s += x[(static_cast<long>(i) * w + j) * c + ch];
            out[static_cast<long>(i) * c + ch] = s * inv;
        }
    }
}

void mean_pool_height(const real* x, real* out, int h, int w, int c) {
    const real inv = real(1) / real(h);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < w; ++j) {
        for (int ch = 0; ch < c; ++ch) {
            real s = real(0);
            for (int i = 0; i < h; ++i) s += x[(static_cast<long>(i) * w + j) * c + ch];
            out[static_cast<long>(j) * c + ch] = s * inv;
        }
    }
}

void bilinear(const real* x, real* y, int h, int w, int c, int oh, int ow) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < oh; ++i) {
        const Lerp ly = lerp_coeff(i, h, oh);
        for (int j = 0; j < ow; ++j) {
            const Lerp lx = lerp_coeff(j, w, ow);
            const real* p00 = x + (static_cast<long>(ly.lo) * w + lx.lo) * c;
            const real* p01 = x + (static_cast<long>(ly.lo) * w + lx.hi) * c;
            const real* p10 = x + (static_cast<long>(ly.hi) * w + lx.lo) * c;
            const real* p11 = x + (static_cast<long>(ly.hi) * w + lx.hi) * c;
            real* yp = y + (static_cast<long>(i) * ow + j) * c;
            for (int ch = 0; ch < c; ++ch) {
                yp[ch] = ly.wlo * (lx.wlo * p00[ch] + lx.whi * p01[ch]) +
                         ly.whi * (lx.wlo * p10[ch] + lx.whi * p11[ch]);
            }
        }
    }
}

void bilinear_backward(const real* dy, real* dx, int h, int w, int c, int oh, int ow) {
    // scatter form; channels are independent so the parallel split is race-free
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < oh; ++i) {
            const Lerp ly = lerp_coeff(i, h, oh);
            for (int j = 0; j < ow; ++j) {
                const Lerp lx = lerp_coeff(j, w, ow);
                const real g = dy[(static_cast<long>(i) * ow + j) * c + ch];
                dx[(static_cast<long>(ly.lo) * w + lx.lo) * c + ch] += g * ly.wlo * lx.wlo;
                dx[(static_cast<long>(ly.lo) * w + lx.hi) * c + ch] += g * ly.wlo * lx.whi;
                dx[(static_cast<long>(ly.hi) * w + lx.lo) * c + ch] += g * ly.whi * lx.wlo;
                dx[(static_cast<long>(ly.hi) * w + lx.hi) * c + ch] += g * ly.whi * lx.whi;
            }
        }
    }
}

void colsum_acc(const real* x, real* out, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        real s = real(0);
        for (int i = 0; i < m; ++i) s += x[static_cast<long>(i) * n + j];
        out[j] += s;
    }
}

}  // namespace par

}  // namespace cprn::kernels
