#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cprn/error.hpp"
#include "cprn/kernels.hpp"
#include "cprn/real.hpp"
#include "cprn/rng.hpp"

namespace cprn {

long numel_of(const std::vector<int>& shape);

struct TensorNode {
    std::vector<int> shape;
    std::vector<real> value;
    bool requires_grad = false;
};
using NodePtr = std::shared_ptr<TensorNode>;

/// Per-node gradient accumulation buffers used during one backward pass.
class GradBuffers {
public:
    std::vector<real>& acc(const TensorNode* n);
    const std::vector<real>* find(const TensorNode* n) const;
    std::unordered_map<const TensorNode*, std::vector<real>>& map() { return grads_; }

private:
    std::unordered_map<const TensorNode*, std::vector<real>> grads_;
};

/// Reverse-mode tape. Ops record entries in creation order, which is a valid
/// topological order, so backward is a single reverse sweep.
class GradTape {
public:
    struct Entry {
        NodePtr out;
        std::function<void(const std::vector<real>&, GradBuffers&)> backward;
    };

    void record(NodePtr out, std::function<void(const std::vector<real>&, GradBuffers&)> fn);
    void reset();

    std::vector<Entry> entries;
    bool consumed = false;
};

GradTape* active_tape();

/// RAII activation of a tape on the current thread.
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* prev_;
};

/// Dense n-d value handle. Immutable through the public API; new tensors come
/// from ops or factory functions.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(std::vector<int> shape, std::vector<real> data, bool requires_grad = false);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, real v, bool requires_grad = false);
    static Tensor scalar(real v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    long numel() const { return static_cast<long>(node_->value.size()); }
    const std::vector<real>& data() const { return node_->value; }
    bool requires_grad() const { return node_->requires_grad; }
    real item() const;
    real at(std::initializer_list<int> idx) const;

    TensorNode* node() const { return node_.get(); }
    const NodePtr& handle() const { return node_; }

    static Tensor wrap(NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    NodePtr node_;
};

enum class PoolAxis { Width, Height };

// --- core ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor elementwise(const Tensor& a, const Tensor& b, kernels::Binary kind);

Tensor mul_scalar(const Tensor& x, real s);
Tensor add_scalar(const Tensor& x, real s);

Tensor scalar_fn(const Tensor& x, kernels::Unary kind);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// y = x W + b applied at every position; x last extent must equal W rows.
Tensor linear_op(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);

Tensor mean_pool(const Tensor& x, PoolAxis axis);
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_last(const std::vector<Tensor>& parts);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// [H x W x T] -> [1 x 1 x T]
Tensor sum_hw(const Tensor& x);
/// [... x T] -> [... x 1]
Tensor sum_last_keep(const Tensor& x);

/// mask[h, w, t] = eh[h, t] * ew[w, t]
Tensor outer_per_word(const Tensor& eh, const Tensor& ew);

/// [H x W x C] -> [H/p x W/p x p*p*C]; extents must divide by p.
Tensor space_to_depth(const Tensor& x, int p);

/// Inverted dropout with a caller-supplied stream; identity when !training.
Tensor dropout(const Tensor& x, real p, Rng& rng, bool training);

/// Row lookup with zero padding past ids.size(); gradients flow to used rows.
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids, int t_max);

/// Mean binary cross entropy with clamped logs (eps 1e-7). truth must be 0/1.
Tensor bce_loss(const Tensor& pred, const Tensor& truth);

// --- backward --------------------------------------------------------------

class Gradients {
public:
    bool has(const Tensor& t) const { return grads_.count(t.node()) > 0; }
    const std::vector<real>& at(const Tensor& t) const;

private:
    friend Gradients backward(const Tensor& loss);
    std::unordered_map<const TensorNode*, std::vector<real>> grads_;
};

/// Reverse sweep over the active tape from a scalar loss. The tape is marked
/// consumed; reset() it before recording another graph.
Gradients backward(const Tensor& loss);

}  // namespace cprn
