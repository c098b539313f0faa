#pragma once

#include "cprn/real.hpp"

// Dense compute kernels over raw row-major buffers.
//
// Two variants of every forward kernel:
//   kernels::serial — naive reference loops, kept for testing and benchmarking
//   kernels::par    — OpenMP-parallel versions used by the tensor ops
//
// Parallel kernels split work so that each output element is computed by one
// thread with the same inner-loop order as the serial code, so the two
// variants agree bitwise. Gradient kernels live in par only; they are checked
// against finite differences at the tensor level.

namespace cprn::kernels {

enum class Binary { Add, Sub, Mul, Div };
enum class Unary { Gelu, Relu, Sigmoid };

namespace serial {

// C[m x n] = A[m x k] * B[k x n]
void matmul(const real* a, const real* b, real* c, int m, int k, int n);

// y[p x cout] = x[p x cin] * w[cin x cout] + bias[cout], applied per position
void linear(const real* x, const real* w, const real* bias, real* y,
            int positions, int cin, int cout);

// Stabilized softmax over the middle extent of an (outer, len, inner) view.
void softmax(const real* x, real* y, int outer, int len, int inner);

void unary(Unary kind, const real* x, real* y, long n);
void binary(Binary kind, const real* a, const real* b, real* y, long n);

// x is H x W x C. Width pool -> out[H x C]; height pool -> out[W x C].
void mean_pool_width(const real* x, real* out, int h, int w, int c);
void mean_pool_height(const real* x, real* out, int h, int w, int c);

// align-corners=false, edge-clamped
void bilinear(const real* x, real* y, int h, int w, int c, int oh, int ow);

}  // namespace serial

namespace par {

void matmul(const real* a, const real* b, real* c, int m, int k, int n);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const real* a, const real* b, real* c, int m, int k, int n);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const real* a, const real* b, real* c, int m, int k, int n);

void linear(const real* x, const real* w, const real* bias, real* y,
            int positions, int cin, int cout);

void softmax(const real* x, real* y, int outer, int len, int inner);
// dx = y .* (dy - sum(dy .* y)) per slice; dx accumulates (+=)
void softmax_backward(const real* y, const real* dy, real* dx,
                      int outer, int len, int inner);

void unary(Unary kind, const real* x, real* y, long n);
// dx += dy .* f'(x)
void unary_backward(Unary kind, const real* x, const real* dy, real* dx, long n);
void binary(Binary kind, const real* a, const real* b, real* y, long n);

void mean_pool_width(const real* x, real* out, int h, int w, int c);
void mean_pool_height(const real* x, real* out, int h, int w, int c);

void bilinear(const real* x, real* y, int h, int w, int c, int oh, int ow);
// scatter-transpose of bilinear; dx accumulates (+=), parallel over channels
void bilinear_backward(const real* dy, real* dx, int h, int w, int c, int oh, int ow);

// out[j] = sum_i x[i x n] column j; accumulates (+=)
void colsum_acc(const real* x, real* out, int m, int n);

}  // namespace par

}  // namespace cprn::kernels
