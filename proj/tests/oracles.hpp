#pragma once

// Test-only reference implementations. These stay naive and independent of
// the library kernels so they can serve as oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "cprn/params.hpp"
#include "cprn/rng.hpp"
#include "cprn/tensor.hpp"

namespace oracle {

using cprn::real;

inline std::vector<real> random_vec(long n, cprn::Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<real> out(static_cast<size_t>(n));
    for (auto& v : out) v = static_cast<real>(rng.uniform(lo, hi));
    return out;
}

inline std::vector<real> matmul(const std::vector<real>& a, const std::vector<real>& b, int m,
                                int k, int n) {
    std::vector<real> c(static_cast<size_t>(m) * n, real(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            real s = 0;
            for (int t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
            c[i * n + j] = s;
        }
    return c;
}

inline std::vector<real> linear(const std::vector<real>& x, const std::vector<real>& w,
                                const std::vector<real>& b, int positions, int cin, int cout) {
    std::vector<real> y(static_cast<size_t>(positions) * cout, real(0));
    for (int p = 0; p < positions; ++p)
        for (int j = 0; j < cout; ++j) {
            real s = b[j];
            for (int t = 0; t < cin; ++t) s += x[p * cin + t] * w[t * cout + j];
            y[p * cout + j] = s;
        }
    return y;
}

inline std::vector<real> softmax_rows(const std::vector<real>& x, int rows, int cols) {
    std::vector<real> y(x.size());
    for (int i = 0; i < rows; ++i) {
        real mx = x[i * cols];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[i * cols + j]);
        real sum = 0;
        for (int j = 0; j < cols; ++j) {
            y[i * cols + j] = std::exp(x[i * cols + j] - mx);
            sum += y[i * cols + j];
        }
        for (int j = 0; j < cols; ++j) y[i * cols + j] /= sum;
    }
    return y;
}

inline std::vector<real> mean_pool_width(const std::vector<real>& x, int h, int w, int c) {
    std::vector<real> out(static_cast<size_t>(h) * c, real(0));
    for (int i = 0; i < h; ++i)
        for (int ch = 0; ch < c; ++ch) {
            real s = 0;
            for (int j = 0; j < w; ++j) s += x[(i * w + j) * c + ch];
            out[i * c + ch] = s / real(w);
        }
    return out;
}

inline std::vector<real> mean_pool_height(const std::vector<real>& x, int h, int w, int c) {
    std::vector<real> out(static_cast<size_t>(w) * c, real(0));
    for (int j = 0; j < w; ++j)
        for (int ch = 0; ch < c; ++ch) {
            real s = 0;
            for (int i = 0; i < h; ++i) s += x[(i * w + j) * c + ch];
            out[j * c + ch] = s / real(h);
        }
    return out;
}

/// align-corners=false bilinear, written from the sampling definition.
inline std::vector<real> bilinear(const std::vector<real>& x, int h, int w, int c, int oh, int ow) {
    std::vector<real> y(static_cast<size_t>(oh) * ow * c, real(0));
    auto clamp = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
    for (int i = 0; i < oh; ++i) {
        const double sy = (i + 0.5) * static_cast<double>(h) / oh - 0.5;
        const int y0 = static_cast<int>(std::floor(sy));
        const double fy = sy - y0;
        for (int j = 0; j < ow; ++j) {
            const double sx = (j + 0.5) * static_cast<double>(w) / ow - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                auto v = [&](int yy, int xx) {
                    return static_cast<double>(
                        x[(clamp(yy, h - 1) * w + clamp(xx, w - 1)) * c + ch]);
                };
                const double top = v(y0, x0) * (1 - fx) + v(y0, x0 + 1) * fx;
                const double bot = v(y0 + 1, x0) * (1 - fx) + v(y0 + 1, x0 + 1) * fx;
                y[(i * ow + j) * c + ch] = static_cast<real>(top * (1 - fy) + bot * fy);
            }
        }
    }
    return y;
}

/// Scaled dot-product attention with explicit loops.
inline std::vector<real> attend(const std::vector<real>& q, const std::vector<real>& k,
                                const std::vector<real>& v, int nq, int nk, int d, int dv) {
    std::vector<real> logits(static_cast<size_t>(nq) * nk);
    const real scale = real(1) / std::sqrt(static_cast<real>(d));
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j) {
            real s = 0;
            for (int t = 0; t < d; ++t) s += q[i * d + t] * k[j * d + t];
            logits[i * nk + j] = s * scale;
        }
    std::vector<real> w = softmax_rows(logits, nq, nk);
    std::vector<real> out(static_cast<size_t>(nq) * dv, real(0));
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j)
            for (int t = 0; t < dv; ++t) out[i * dv + t] += w[i * nk + j] * v[j * dv + t];
    return out;
}

/// Per-word outer product of spatial softmax maps, normalized over H*W.
inline std::vector<real> location_prior(const std::vector<real>& logits_h,
                                        const std::vector<real>& logits_w, int h, int w, int t) {
    // column softmax over the spatial axis
    auto col_softmax = [](const std::vector<real>& m, int rows, int cols) {
        std::vector<real> out(m.size());
        for (int j = 0; j < cols; ++j) {
            real mx = m[j];
            for (int i = 1; i < rows; ++i) mx = std::max(mx, m[i * cols + j]);
            real sum = 0;
            for (int i = 0; i < rows; ++i) {
                out[i * cols + j] = std::exp(m[i * cols + j] - mx);
                sum += out[i * cols + j];
            }
            for (int i = 0; i < rows; ++i) out[i * cols + j] /= sum;
        }
        return out;
    };
    std::vector<real> eh = col_softmax(logits_h, h, t);
    std::vector<real> ew = col_softmax(logits_w, w, t);
    std::vector<real> mask(static_cast<size_t>(h) * w * t);
    for (int k = 0; k < t; ++k) {
        real total = 0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) total += eh[i * t + k] * ew[j * t + k];
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                mask[(i * w + j) * t + k] = eh[i * t + k] * ew[j * t + k] / total;
    }
    return mask;
}

/// (mean of masks) contracted with word values and gated onto v_g.
inline std::vector<real> guided(const std::vector<real>& v_g, const std::vector<real>& g_k,
                                const std::vector<real>& g_v, const std::vector<real>& mask_roco,
                                int h, int w, int c, int t) {
    const real scale = real(1) / std::sqrt(static_cast<real>(c));
    std::vector<real> out(static_cast<size_t>(h) * w * c, real(0));
    for (int p = 0; p < h * w; ++p) {
        std::vector<real> logits(static_cast<size_t>(t));
        for (int k = 0; k < t; ++k) {
            real s = 0;
            for (int ch = 0; ch < c; ++ch) s += v_g[p * c + ch] * g_k[k * c + ch];
            logits[static_cast<size_t>(k)] = s * scale;
        }
        real mx = logits[0];
        for (int k = 1; k < t; ++k) mx = std::max(mx, logits[static_cast<size_t>(k)]);
        real sum = 0;
        std::vector<real> holi(static_cast<size_t>(t));
        for (int k = 0; k < t; ++k) {
            holi[static_cast<size_t>(k)] = std::exp(logits[static_cast<size_t>(k)] - mx);
            sum += holi[static_cast<size_t>(k)];
        }
        for (int k = 0; k < t; ++k) holi[static_cast<size_t>(k)] /= sum;
        for (int ch = 0; ch < c; ++ch) {
            real mixed = 0;
            for (int k = 0; k < t; ++k) {
                const real roho = (mask_roco[p * t + k] + holi[static_cast<size_t>(k)]) / real(2);
                mixed += roho * g_v[k * c + ch];
            }
            out[p * c + ch] = mixed * v_g[p * c + ch];
        }
    }
    return out;
}

inline real gelu_scalar(real x) {
    return real(0.5) * x *
           (real(1) + std::tanh(real(0.7978845608028654) * (x + real(0.044715) * x * x * x)));
}

/// Full naive recomputation of the axis location prior from the stage feature,
/// token matrix, and raw projection parameters.
inline std::vector<real> mask_roco_pipeline(const std::vector<real>& v, const std::vector<real>& l,
                                            const std::vector<real>& wh, const std::vector<real>& bh,
                                            const std::vector<real>& ww, const std::vector<real>& bw,
                                            const std::vector<real>& whk, const std::vector<real>& bhk,
                                            const std::vector<real>& wwk, const std::vector<real>& bwk,
                                            int h, int w, int c, int t, int d_l) {
    auto vh = linear(mean_pool_width(v, h, w, c), wh, bh, h, c, c);
    for (auto& x : vh) x = gelu_scalar(x);
    auto vw = linear(mean_pool_height(v, h, w, c), ww, bw, w, c, c);
    for (auto& x : vw) x = gelu_scalar(x);
    auto hk = linear(l, whk, bhk, t, d_l, c);
    auto wk = linear(l, wwk, bwk, t, d_l, c);
    const real scale = real(1) / std::sqrt(static_cast<real>(c));
    std::vector<real> logits_h(static_cast<size_t>(h) * t), logits_w(static_cast<size_t>(w) * t);
    for (int i = 0; i < h; ++i)
        for (int k = 0; k < t; ++k) {
            real s = 0;
            for (int ch = 0; ch < c; ++ch) s += vh[static_cast<size_t>(i * c + ch)] * hk[static_cast<size_t>(k * c + ch)];
            logits_h[static_cast<size_t>(i * t + k)] = s * scale;
        }
    for (int j = 0; j < w; ++j)
        for (int k = 0; k < t; ++k) {
            real s = 0;
            for (int ch = 0; ch < c; ++ch) s += vw[static_cast<size_t>(j * c + ch)] * wk[static_cast<size_t>(k * c + ch)];
            logits_w[static_cast<size_t>(j * t + k)] = s * scale;
        }
    return location_prior(logits_h, logits_w, h, w, t);
}

inline double bce(const std::vector<real>& pred, const std::vector<real>& truth) {
    double acc = 0;
    const double eps = 1e-7;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double q = std::min(std::max(static_cast<double>(pred[i]), eps), 1.0 - eps);
        acc -= truth[i] * std::log(q) + (1.0 - truth[i]) * std::log(1.0 - q);
    }
    return acc / static_cast<double>(pred.size());
}

/// IoU through explicit pixel index sets.
inline double iou_sets(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    std::set<size_t> sa, sb;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i]) sa.insert(i);
    for (size_t i = 0; i < b.size(); ++i)
        if (b[i]) sb.insert(i);
    std::vector<size_t> inter, uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    if (uni.empty()) return 1.0;
    return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// --- finite differences ---------------------------------------------------------

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    long checked = 0;
};

/// Central finite differences over every element of every registered
/// parameter, against one analytic backward pass. The relative-error
/// denominator is floored at the finite-difference noise scale.
template <typename ForwardFn>
FdReport fd_check(cprn::ParameterStore& store, ForwardFn forward, double step = 1e-5) {
    cprn::GradTape tape;
    std::map<std::string, std::vector<real>> analytic;
    {
        cprn::TapeScope scope(tape);
        cprn::Tensor loss = forward();
        cprn::Gradients grads = cprn::backward(loss);
        for (const auto& name : store.names()) {
            const cprn::Tensor& p = store.get(name);
            if (grads.has(p)) {
                analytic[name] = grads.at(p);
            } else {
                analytic[name].assign(p.data().size(), real(0));
            }
        }
    }

    FdReport rep;
    for (const auto& name : store.names()) {
        cprn::Tensor param = store.get(name);
        auto& values = param.node()->value;
        const auto& ga = analytic[name];
        for (size_t i = 0; i < values.size(); ++i) {
            const real keep = values[i];
            values[i] = keep + static_cast<real>(step);
            const double up = static_cast<double>(forward().item());
            values[i] = keep - static_cast<real>(step);
            const double down = static_cast<double>(forward().item());
            values[i] = keep;
            const double fd = (up - down) / (2.0 * step);
            const double a = static_cast<double>(ga[i]);
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

inline double max_abs_diff(const std::vector<real>& a, const std::vector<real>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return a.size() == b.size() ? m : 1e30;
}

}  // namespace oracle
