#include "cprn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cprn {

namespace {

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

thread_local GradTape* t_active_tape = nullptr;

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (t_active_tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

NodePtr make_node(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(numel_of(n->shape)), real(0));
    n->requires_grad = requires_grad;
    return n;
}

void add_into(std::vector<real>& dst, const std::vector<real>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

long numel_of(const std::vector<int>& shape) {
    long n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::vector<real>& GradBuffers::acc(const TensorNode* n) {
    auto it = grads_.find(n);
    if (it == grads_.end()) {
        it = grads_.emplace(n, std::vector<real>(n->value.size(), real(0))).first;
    }
    return it->second;
}

const std::vector<real>* GradBuffers::find(const TensorNode* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
}

void GradTape::record(NodePtr out, std::function<void(const std::vector<real>&, GradBuffers&)> fn) {
    if (consumed) {
        throw ValueError("GradTape: recording after backward; call reset() first");
    }
    entries.push_back(Entry{std::move(out), std::move(fn)});
}

void GradTape::reset() {
    entries.clear();
    consumed = false;
}

GradTape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(GradTape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

// --- Tensor basics ----------------------------------------------------------

Tensor Tensor::leaf(std::vector<int> shape, std::vector<real> data, bool requires_grad) {
    if (numel_of(shape) != static_cast<long>(data.size())) {
        throw DimError("Tensor::leaf: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    for (int e : shape) {
        if (e <= 0) throw DimError("Tensor::leaf: non-positive extent in " + shape_str(shape));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return leaf(shape, std::vector<real>(static_cast<size_t>(numel_of(shape)), real(0)),
                requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, real v, bool requires_grad) {
    return leaf(shape, std::vector<real>(static_cast<size_t>(numel_of(shape)), v), requires_grad);
}

Tensor Tensor::scalar(real v) { return leaf({1}, {v}); }

real Tensor::item() const {
    if (numel() != 1) throw DimError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

real Tensor::at(std::initializer_list<int> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size()) throw DimError("at(): rank mismatch");
    long flat = 0;
    size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[k]) throw DimError("at(): index out of range");
        flat = flat * s[k] + i;
        ++k;
    }
    return node_->value[static_cast<size_t>(flat)];
}

const std::vector<real>& Gradients::at(const Tensor& t) const {
    auto it = grads_.find(t.node());
    if (it == grads_.end()) {
        throw ValueError("Gradients::at: no gradient recorded for this tensor");
    }
    return it->second;
}

// --- matmul / transpose -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
    const bool rec = tracing({&a, &b});
    NodePtr out = make_node({m, n}, rec);
    kernels::par::matmul(a.data().data(), b.data().data(), out->value.data(), m, k, n);
    if (rec) {
        NodePtr an = a.handle(), bn = b.handle();
        t_active_tape->record(out, [an, bn, m, k, n](const std::vector<real>& g, GradBuffers& bufs) {
            if (an->requires_grad) {
                std::vector<real> da(static_cast<size_t>(m) * k);
                kernels::par::matmul_nt(g.data(), bn->value.data(), da.data(), m, n, k);
                add_into(bufs.acc(an.get()), da);
            }
            if (bn->requires_grad) {
                std::vector<real> db(static_cast<size_t>(k) * n);
                kernels::par::matmul_tn(an->value.data(), g.data(), db.data(), k, m, n);
                add_into(bufs.acc(bn.get()), db);
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw DimError("transpose2d: expects rank-2, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    const bool rec = tracing({&x});
    NodePtr out = make_node({n, m}, rec);
    const real* src = x.data().data();
    real* dst = out->value.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dst[static_cast<long>(j) * m + i] = src[static_cast<long>(i) * n + j];
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, m, n](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i)
                    dx[static_cast<long>(i) * n + j] += g[static_cast<long>(j) * m + i];
        });
    }
    return Tensor::wrap(out);
}

// --- broadcast elementwise ----------------------------------------------------

namespace {

struct Bcast {
    std::vector<int> out_shape;
    std::vector<long> a_stride, b_stride;  // 0 on broadcast axes
};

Bcast broadcast_plan(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) {
        throw DimError("elementwise: rank mismatch " + shape_str(a) + " vs " + shape_str(b) +
                       " (no implicit rank promotion)");
    }
    const size_t r = a.size();
    Bcast p;
    p.out_shape.resize(r);
    for (size_t i = 0; i < r; ++i) {
        if (a[i] == b[i]) {
            p.out_shape[i] = a[i];
        } else if (a[i] == 1 || b[i] == 1) {
            p.out_shape[i] = std::max(a[i], b[i]);
        } else {
            throw DimError("elementwise: incompatible extents " + shape_str(a) + " vs " + shape_str(b));
        }
    }
    p.a_stride.assign(r, 0);
    p.b_stride.assign(r, 0);
    long as = 1, bs = 1;
    for (size_t i = r; i-- > 0;) {
        p.a_stride[i] = (a[i] == 1 && p.out_shape[i] > 1) ? 0 : as;
        p.b_stride[i] = (b[i] == 1 && p.out_shape[i] > 1) ? 0 : bs;
        as *= a[i];
        bs *= b[i];
    }
    return p;
}

// Odometer walk over the output index space, yielding mapped flat offsets.
template <typename F>
void bcast_for_each(const Bcast& p, F&& f) {
    const size_t r = p.out_shape.size();
    std::vector<int> idx(r, 0);
    long ai = 0, bi = 0;
    const long total = numel_of(p.out_shape);
    for (long o = 0; o < total; ++o) {
        f(o, ai, bi);
        for (size_t i = r; i-- > 0;) {
            ++idx[i];
            ai += p.a_stride[i];
            bi += p.b_stride[i];
            if (idx[i] < p.out_shape[i]) break;
            ai -= p.a_stride[i] * p.out_shape[i];
            bi -= p.b_stride[i] * p.out_shape[i];
            idx[i] = 0;
        }
    }
}

}  // namespace

Tensor elementwise(const Tensor& a, const Tensor& b, kernels::Binary kind) {
    using kernels::Binary;
    const bool rec = tracing({&a, &b});
    if (a.shape() == b.shape()) {
        NodePtr out = make_node(a.shape(), rec);
        kernels::par::binary(kind, a.data().data(), b.data().data(), out->value.data(), a.numel());
        if (rec) {
            NodePtr an = a.handle(), bn = b.handle();
            t_active_tape->record(out, [an, bn, kind, out_w = std::weak_ptr<TensorNode>(out)](
                                           const std::vector<real>& g, GradBuffers& bufs) {
                const long n = static_cast<long>(g.size());
                if (an->requires_grad) {
                    auto& da = bufs.acc(an.get());
                    switch (kind) {
                        case Binary::Add:
                        case Binary::Sub:
                            for (long i = 0; i < n; ++i) da[i] += g[i];
                            break;
                        case Binary::Mul:
                            for (long i = 0; i < n; ++i) da[i] += g[i] * bn->value[i];
                            break;
                        case Binary::Div:
                            for (long i = 0; i < n; ++i) da[i] += g[i] / bn->value[i];
                            break;
                    }
                }
                if (bn->requires_grad) {
                    auto& db = bufs.acc(bn.get());
                    switch (kind) {
                        case Binary::Add:
                            for (long i = 0; i < n; ++i) db[i] += g[i];
                            break;
                        case Binary::Sub:
                            for (long i = 0; i < n; ++i) db[i] -= g[i];
                            break;
                        case Binary::Mul:
                            for (long i = 0; i < n; ++i) db[i] += g[i] * an->value[i];
                            break;
                        case Binary::Div: {
                            auto out_n = out_w.lock();
                            for (long i = 0; i < n; ++i)
                                db[i] -= g[i] * out_n->value[i] / bn->value[i];
                            break;
                        }
                    }
                }
            });
        }
        return Tensor::wrap(out);
    }

    const Bcast plan = broadcast_plan(a.shape(), b.shape());
    NodePtr out = make_node(plan.out_shape, rec);
    {
        const real* pa = a.data().data();
        const real* pb = b.data().data();
        real* po = out->value.data();
        bcast_for_each(plan, [&](long o, long ai, long bi) {
            switch (kind) {
                case Binary::Add: po[o] = pa[ai] + pb[bi]; break;
                case Binary::Sub: po[o] = pa[ai] - pb[bi]; break;
                case Binary::Mul: po[o] = pa[ai] * pb[bi]; break;
                case Binary::Div: po[o] = pa[ai] / pb[bi]; break;
            }
        });
    }
    if (rec) {
        NodePtr an = a.handle(), bn = b.handle();
        t_active_tape->record(out, [an, bn, kind, plan](const std::vector<real>& g, GradBuffers& bufs) {
            const real* pa = an->value.data();
            const real* pb = bn->value.data();
            std::vector<real>* da = an->requires_grad ? &bufs.acc(an.get()) : nullptr;
            std::vector<real>* db = bn->requires_grad ? &bufs.acc(bn.get()) : nullptr;
            bcast_for_each(plan, [&](long o, long ai, long bi) {
                switch (kind) {
                    case kernels::Binary::Add:
                        if (da) (*da)[ai] += g[o];
                        if (db) (*db)[bi] += g[o];
                        break;
                    case kernels::Binary::Sub:
                        if (da) (*da)[ai] += g[o];
                        if (db) (*db)[bi] -= g[o];
                        break;
                    case kernels::Binary::Mul:
                        if (da) (*da)[ai] += g[o] * pb[bi];
                        if (db) (*db)[bi] += g[o] * pa[ai];
                        break;
                    case kernels::Binary::Div:
                        if (da) (*da)[ai] += g[o] / pb[bi];
                        if (db) (*db)[bi] -= g[o] * pa[ai] / (pb[bi] * pb[bi]);
                        break;
                }
            });
        });
    }
    return Tensor::wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, kernels::Binary::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, kernels::Binary::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, kernels::Binary::Mul); }
Tensor divide(const Tensor& a, const Tensor& b) { return elementwise(a, b, kernels::Binary::Div); }

Tensor mul_scalar(const Tensor& x, real s) {
    const bool rec = tracing({&x});
    NodePtr out = make_node(x.shape(), rec);
    const real* px = x.data().data();
    real* po = out->value.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) po[i] = px[i] * s;
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, s](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * s;
        });
    }
    return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& x, real s) {
    const bool rec = tracing({&x});
    NodePtr out = make_node(x.shape(), rec);
    const real* px = x.data().data();
    real* po = out->value.data();
    const long n = x.numel();
    for (long i = 0; i < n; ++i) po[i] = px[i] + s;
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn](const std::vector<real>& g, GradBuffers& bufs) {
            add_into(bufs.acc(xn.get()), g);
        });
    }
    return Tensor::wrap(out);
}

// --- unary -----------------------------------------------------------------

Tensor scalar_fn(const Tensor& x, kernels::Unary kind) {
    const bool rec = tracing({&x});
    NodePtr out = make_node(x.shape(), rec);
    kernels::par::unary(kind, x.data().data(), out->value.data(), x.numel());
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, kind](const std::vector<real>& g, GradBuffers& bufs) {
            kernels::par::unary_backward(kind, xn->value.data(), g.data(),
                                         bufs.acc(xn.get()).data(),
                                         static_cast<long>(g.size()));
        });
    }
    return Tensor::wrap(out);
}

Tensor gelu(const Tensor& x) { return scalar_fn(x, kernels::Unary::Gelu); }
Tensor relu(const Tensor& x) { return scalar_fn(x, kernels::Unary::Relu); }
Tensor sigmoid(const Tensor& x) { return scalar_fn(x, kernels::Unary::Sigmoid); }

// --- linear ------------------------------------------------------------------

Tensor linear_op(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2 || b.rank() != 1) {
        throw DimError("linear: weight must be rank-2 and bias rank-1");
    }
    const int cin = w.dim(0), cout = w.dim(1);
    if (x.rank() < 1 || x.dim(x.rank() - 1) != cin) {
        throw DimError("linear: input " + shape_str(x.shape()) + " does not end in c_in=" +
                       std::to_string(cin));
    }
    if (b.dim(0) != cout) throw DimError("linear: bias extent mismatch");
    const int positions = static_cast<int>(x.numel() / cin);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = cout;
    const bool rec = tracing({&x, &w, &b});
    NodePtr out = make_node(out_shape, rec);
    kernels::par::linear(x.data().data(), w.data().data(), b.data().data(), out->value.data(),
                         positions, cin, cout);
    if (rec) {
        NodePtr xn = x.handle(), wn = w.handle(), bn = b.handle();
        t_active_tape->record(
            out, [xn, wn, bn, positions, cin, cout](const std::vector<real>& g, GradBuffers& bufs) {
                if (xn->requires_grad) {
                    std::vector<real> dx(static_cast<size_t>(positions) * cin);
                    kernels::par::matmul_nt(g.data(), wn->value.data(), dx.data(), positions, cout, cin);
                    add_into(bufs.acc(xn.get()), dx);
                }
                if (wn->requires_grad) {
                    std::vector<real> dw(static_cast<size_t>(cin) * cout);
                    kernels::par::matmul_tn(xn->value.data(), g.data(), dw.data(), cin, positions, cout);
                    add_into(bufs.acc(wn.get()), dw);
                }
                if (bn->requires_grad) {
                    kernels::par::colsum_acc(g.data(), bufs.acc(bn.get()).data(), positions, cout);
                }
            });
    }
    return Tensor::wrap(out);
}

// --- softmax -----------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        throw DimError("softmax: axis " + std::to_string(axis) + " invalid for " +
                       shape_str(x.shape()));
    }
    const int len = x.dim(axis);
    if (len < 1) throw DimError("softmax: empty axis");
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const bool rec = tracing({&x});
    NodePtr out = make_node(x.shape(), rec);
    kernels::par::softmax(x.data().data(), out->value.data(), outer, len, inner);
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, outer, len, inner, out_w = std::weak_ptr<TensorNode>(out)](
                                       const std::vector<real>& g, GradBuffers& bufs) {
            auto out_n = out_w.lock();
            kernels::par::softmax_backward(out_n->value.data(), g.data(),
                                           bufs.acc(xn.get()).data(), outer, len, inner);
        });
    }
    return Tensor::wrap(out);
}

// --- pooling / resize ---------------------------------------------------------

Tensor mean_pool(const Tensor& x, PoolAxis axis) {
    if (x.rank() != 3) throw DimError("mean_pool: expects H x W x C, got " + shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const bool rec = tracing({&x});
    NodePtr out;
    if (axis == PoolAxis::Width) {
        out = make_node({h, c}, rec);
        kernels::par::mean_pool_width(x.data().data(), out->value.data(), h, w, c);
    } else {
        out = make_node({w, c}, rec);
        kernels::par::mean_pool_height(x.data().data(), out->value.data(), h, w, c);
    }
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, h, w, c, axis](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            if (axis == PoolAxis::Width) {
                const real inv = real(1) / real(w);
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int ch = 0; ch < c; ++ch)
                            dx[(static_cast<long>(i) * w + j) * c + ch] +=
                                g[static_cast<long>(i) * c + ch] * inv;
            } else {
                const real inv = real(1) / real(h);
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int ch = 0; ch < c; ++ch)
                            dx[(static_cast<long>(i) * w + j) * c + ch] +=
                                g[static_cast<long>(j) * c + ch] * inv;
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    if (x.rank() != 3) throw DimError("bilinear_resize: expects h x w x C");
    if (out_h < 1 || out_w < 1) throw DimError("bilinear_resize: target extents must be >= 1");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const bool rec = tracing({&x});
    NodePtr out = make_node({out_h, out_w, c}, rec);
    kernels::par::bilinear(x.data().data(), out->value.data(), h, w, c, out_h, out_w);
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, h, w, c, out_h, out_w](const std::vector<real>& g,
                                                               GradBuffers& bufs) {
            kernels::par::bilinear_backward(g.data(), bufs.acc(xn.get()).data(), h, w, c, out_h, out_w);
        });
    }
    return Tensor::wrap(out);
}

// --- structure ----------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    const bool rec = tracing({&x});
    NodePtr out = make_node(std::move(shape), rec);
    out->value = x.data();
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn](const std::vector<real>& g, GradBuffers& bufs) {
            add_into(bufs.acc(xn.get()), g);
        });
    }
    return Tensor::wrap(out);
}

Tensor concat_last(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimError("concat_last: no inputs");
    const auto& first = parts.front().shape();
    int total_last = 0;
    bool rec = false;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(first.size())) throw DimError("concat_last: rank mismatch");
        for (int i = 0; i + 1 < p.rank(); ++i) {
            if (p.dim(i) != first[static_cast<size_t>(i)]) {
                throw DimError("concat_last: leading extents differ");
            }
        }
        total_last += p.dim(p.rank() - 1);
        if (t_active_tape && p.requires_grad()) rec = true;
    }
    std::vector<int> out_shape = first;
    out_shape.back() = total_last;
    NodePtr out = make_node(out_shape, rec);

    const long rows = numel_of(first) / first.back();
    {
        real* po = out->value.data();
        long off = 0;
        for (const auto& p : parts) {
            const int pc = p.dim(p.rank() - 1);
            const real* pp = p.data().data();
            for (long r = 0; r < rows; ++r) {
                std::copy(pp + r * pc, pp + (r + 1) * pc, po + r * total_last + off);
            }
            off += pc;
        }
    }
    if (rec) {
        std::vector<NodePtr> nodes;
        std::vector<int> lasts;
        for (const auto& p : parts) {
            nodes.push_back(p.handle());
            lasts.push_back(p.dim(p.rank() - 1));
        }
        t_active_tape->record(out, [nodes, lasts, rows, total_last](const std::vector<real>& g,
                                                                    GradBuffers& bufs) {
            long off = 0;
            for (size_t k = 0; k < nodes.size(); ++k) {
                const int pc = lasts[k];
                if (nodes[k]->requires_grad) {
                    auto& dp = bufs.acc(nodes[k].get());
                    for (long r = 0; r < rows; ++r)
                        for (int j = 0; j < pc; ++j)
                            dp[r * pc + j] += g[r * total_last + off + j];
                }
                off += pc;
            }
        });
    }
    return Tensor::wrap(out);
}

// --- reductions -----------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    const bool rec = tracing({&x});
    NodePtr out = make_node({1}, rec);
    real s = 0;
    for (real v : x.data()) s += v;
    out->value[0] = s;
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (auto& v : dx) v += g[0];
        });
    }
    return Tensor::wrap(out);
}

Tensor mean_all(const Tensor& x) {
    const real inv = real(1) / real(x.numel());
    return mul_scalar(sum_all(x), inv);
}

Tensor sum_hw(const Tensor& x) {
    if (x.rank() != 3) throw DimError("sum_hw: expects H x W x T");
    const int h = x.dim(0), w = x.dim(1), t = x.dim(2);
    const bool rec = tracing({&x});
    NodePtr out = make_node({1, 1, t}, rec);
    const real* px = x.data().data();
    for (long p = 0; p < static_cast<long>(h) * w; ++p)
        for (int k = 0; k < t; ++k) out->value[static_cast<size_t>(k)] += px[p * t + k];
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, h, w, t](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (long p = 0; p < static_cast<long>(h) * w; ++p)
                for (int k = 0; k < t; ++k) dx[p * t + k] += g[static_cast<size_t>(k)];
        });
    }
    return Tensor::wrap(out);
}

Tensor sum_last_keep(const Tensor& x) {
    if (x.rank() < 1) throw DimError("sum_last_keep: rank must be >= 1");
    const int t = x.dim(x.rank() - 1);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = 1;
    const long rows = x.numel() / t;
    const bool rec = tracing({&x});
    NodePtr out = make_node(out_shape, rec);
    const real* px = x.data().data();
    for (long r = 0; r < rows; ++r) {
        real s = 0;
        for (int k = 0; k < t; ++k) s += px[r * t + k];
        out->value[static_cast<size_t>(r)] = s;
    }
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, rows, t](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (long r = 0; r < rows; ++r)
                for (int k = 0; k < t; ++k) dx[r * t + k] += g[static_cast<size_t>(r)];
        });
    }
    return Tensor::wrap(out);
}

// --- specialty ops -----------------------------------------------------------------

Tensor outer_per_word(const Tensor& eh, const Tensor& ew) {
    if (eh.rank() != 2 || ew.rank() != 2 || eh.dim(1) != ew.dim(1)) {
        throw DimError("outer_per_word: expects [H x T] and [W x T] with equal T");
    }
    const int h = eh.dim(0), w = ew.dim(0), t = eh.dim(1);
    const bool rec = tracing({&eh, &ew});
    NodePtr out = make_node({h, w, t}, rec);
    const real* ph = eh.data().data();
    const real* pw = ew.data().data();
    real* po = out->value.data();
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < t; ++k)
                po[(static_cast<long>(i) * w + j) * t + k] =
                    ph[static_cast<long>(i) * t + k] * pw[static_cast<long>(j) * t + k];
    if (rec) {
        NodePtr hn = eh.handle(), wn = ew.handle();
        t_active_tape->record(out, [hn, wn, h, w, t](const std::vector<real>& g, GradBuffers& bufs) {
            const real* ph = hn->value.data();
            const real* pw = wn->value.data();
            if (hn->requires_grad) {
                auto& dh = bufs.acc(hn.get());
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int k = 0; k < t; ++k)
                            dh[static_cast<long>(i) * t + k] +=
                                g[(static_cast<long>(i) * w + j) * t + k] * pw[static_cast<long>(j) * t + k];
            }
            if (wn->requires_grad) {
                auto& dw = bufs.acc(wn.get());
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int k = 0; k < t; ++k)
                            dw[static_cast<long>(j) * t + k] +=
                                g[(static_cast<long>(i) * w + j) * t + k] * ph[static_cast<long>(i) * t + k];
            }
        });
    }
    return Tensor::wrap(out);
}

Tensor space_to_depth(const Tensor& x, int p) {
    if (x.rank() != 3) throw DimError("space_to_depth: expects H x W x C");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (p < 1 || h % p != 0 || w % p != 0) {
        throw DimError("space_to_depth: extents must divide by patch size");
    }
    const int oh = h / p, ow = w / p, oc = p * p * c;
    const bool rec = tracing({&x});
    NodePtr out = make_node({oh, ow, oc}, rec);
    const real* px = x.data().data();
    real* po = out->value.data();
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int di = 0; di < p; ++di)
                for (int dj = 0; dj < p; ++dj)
                    for (int ch = 0; ch < c; ++ch)
                        po[(static_cast<long>(i) * ow + j) * oc + (di * p + dj) * c + ch] =
                            px[(static_cast<long>(i * p + di) * w + (j * p + dj)) * c + ch];
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, h, w, c, p, oh, ow, oc](const std::vector<real>& g,
                                                                GradBuffers& bufs) {
            (void)h;
            auto& dx = bufs.acc(xn.get());
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    for (int di = 0; di < p; ++di)
                        for (int dj = 0; dj < p; ++dj)
                            for (int ch = 0; ch < c; ++ch)
                                dx[(static_cast<long>(i * p + di) * w + (j * p + dj)) * c + ch] +=
                                    g[(static_cast<long>(i) * ow + j) * oc + (di * p + dj) * c + ch];
        });
    }
    return Tensor::wrap(out);
}

Tensor dropout(const Tensor& x, real p, Rng& rng, bool training) {
    if (p < real(0) || p >= real(1)) throw ConfigError("dropout: p must be in [0, 1)");
    if (!training || p == real(0)) return x;
    const long n = x.numel();
    std::vector<real> mask(static_cast<size_t>(n));
    const real keep = real(1) - p;
    const real scale = real(1) / keep;
    for (long i = 0; i < n; ++i) {
        mask[static_cast<size_t>(i)] = (rng.uniform() < keep) ? scale : real(0);
    }
    const bool rec = tracing({&x});
    NodePtr out = make_node(x.shape(), rec);
    const real* px = x.data().data();
    for (long i = 0; i < n; ++i) out->value[static_cast<size_t>(i)] = px[i] * mask[static_cast<size_t>(i)];
    if (rec) {
        NodePtr xn = x.handle();
        t_active_tape->record(out, [xn, mask = std::move(mask)](const std::vector<real>& g,
                                                                GradBuffers& bufs) {
            auto& dx = bufs.acc(xn.get());
            for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
        });
    }
    return Tensor::wrap(out);
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids, int t_max) {
    if (table.rank() != 2) throw DimError("embed_rows: table must be [vocab x d]");
    const int vocab = table.dim(0), d = table.dim(1);
    if (static_cast<int>(ids.size()) > t_max) {
        throw DimError("embed_rows: " + std::to_string(ids.size()) + " ids exceed t_max");
    }
    for (int id : ids) {
        if (id < 0 || id >= vocab) throw ConfigError("embed_rows: id out of vocabulary");
    }
    const bool rec = tracing({&table});
    NodePtr out = make_node({t_max, d}, rec);
    const real* pt = table.data().data();
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(pt + static_cast<long>(ids[i]) * d, pt + static_cast<long>(ids[i] + 1) * d,
                  out->value.data() + static_cast<long>(i) * d);
    }
    if (rec) {
        NodePtr tn = table.handle();
        t_active_tape->record(out, [tn, ids, d](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dt = bufs.acc(tn.get());
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    dt[static_cast<long>(ids[i]) * d + j] += g[static_cast<long>(i) * d + j];
        });
    }
    return Tensor::wrap(out);
}

Tensor bce_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape()) {
        throw DimError("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                       shape_str(truth.shape()));
    }
    const long n = pred.numel();
    const real eps = real(1e-7);
    const real* pp = pred.data().data();
    const real* py = truth.data().data();
    for (long i = 0; i < n; ++i) {
        if (py[i] != real(0) && py[i] != real(1)) {
            throw ValueError("bce_loss: ground truth must be binary");
        }
    }
    const bool rec = tracing({&pred});
    NodePtr out = make_node({1}, rec);
    real acc = 0;
    for (long i = 0; i < n; ++i) {
        const real q = std::min(std::max(pp[i], eps), real(1) - eps);
        acc -= py[i] * std::log(q) + (real(1) - py[i]) * std::log(real(1) - q);
    }
    out->value[0] = acc / real(n);
    if (rec) {
        NodePtr pn = pred.handle(), yn = truth.handle();
        t_active_tape->record(out, [pn, yn, n, eps](const std::vector<real>& g, GradBuffers& bufs) {
            auto& dp = bufs.acc(pn.get());
            const real* pp = pn->value.data();
            const real* py = yn->value.data();
            const real scale = g[0] / real(n);
            for (long i = 0; i < n; ++i) {
                if (pp[i] <= eps || pp[i] >= real(1) - eps) continue;  // clamped region is flat
                dp[i] += scale * (pp[i] - py[i]) / (pp[i] * (real(1) - pp[i]));
            }
        });
    }
    return Tensor::wrap(out);
}

// --- backward ------------------------------------------------------------------

Gradients backward(const Tensor& loss) {
    GradTape* tape = t_active_tape;
    if (tape == nullptr) throw ValueError("backward: no active tape");
    if (tape->consumed) throw ValueError("backward: tape already consumed; reset() first");
    if (loss.numel() != 1) throw DimError("backward: loss must be scalar");
    tape->consumed = true;

    GradBuffers bufs;
    bufs.acc(loss.node())[0] = real(1);

    bool seen = false;
    for (size_t i = tape->entries.size(); i-- > 0;) {
        auto& e = tape->entries[i];
        if (e.out.get() == loss.node()) seen = true;
        const std::vector<real>* g = bufs.find(e.out.get());
        if (g != nullptr) {
            e.backward(*g, bufs);
        }
    }
    if (!seen && loss.requires_grad()) {
        // a loss that is itself a leaf is a degenerate but legal graph
        seen = true;
    }
    if (!seen) throw ValueError("backward: loss is not connected to the active tape");

    Gradients out;
    out.grads_ = std::move(bufs.map());
    return out;
}

}  // namespace cprn
